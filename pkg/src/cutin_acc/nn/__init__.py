from .functional import (
    FCParams,
    LSTMParams,
    bptt_backward,
    fc_backward,
    fc_forward,
    half_mse_backward,
    half_mse_loss,
    lstm_sequence_forward,
    lstm_step,
    relu_backward,
    relu_forward,
)
from .gradcheck import gradient_check
from .layers import LSTM, Dense, Flatten, ReLU, RegressionOutput, SequenceInput, Sequential
from .optim import Adam, AdamState, adam_step, clip_by_global_norm
