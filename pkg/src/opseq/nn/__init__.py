from .layers import (conv2d_backward, conv2d_forward, elu, elu_backward,
                     flatten_to_sequence, flatten_to_sequence_backward,
                     lstm_layer_backward, lstm_layer_forward, lstm_step,
                     maxpool_backward, maxpool_forward, softmax,
                     softmax_cross_entropy)
from .model import (ModelConfig, ModelState, classify_backward,
                    classify_forward, init_state, load_checkpoint, predict,
                    save_checkpoint)
from .optim import adam_update
from .train import EpochRecord, train
