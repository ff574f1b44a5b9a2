from .layers import bilstm_padded, lstm_run, tree_lstm, tree_lstm_cell
from .model import (
    KINDS, Model, ModelConfig, Prediction, as_dependency, build_vocab, classify,
    classify_logits, dah_document_vector, encode_document, encode_edu, encode_edus,
    han_document_vector, init_params, load_model, predict, save_model,
)
from .training import TrainConfig, TrainingError, batch_gradients, evaluate_accuracy, train
