"""Malware family classification from opcode / API-call traces with token
n-gram features and a CNN-LSTM classifier."""

__version__ = "0.1.0"
