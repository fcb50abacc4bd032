from .checkpoint import load_model, load_state, save_model, save_state
from .frontend import FrameSequence, FrontendConfig, featurize_series, featurize_trace, pad_batch
from .model import ModelConfig, MultiHeadAttention, Seq2Seq, UnitClassifier, paper_preset, toy_preset
from .search import BeamHypothesis, DecodeResult, beam_search, decode_batch, greedy_decode
from .train import TrainParams, TrainResult, pretrain_units, train_seq2seq, unit_accuracy

__all__ = [
    "BeamHypothesis", "DecodeResult", "FrameSequence", "FrontendConfig", "ModelConfig", "MultiHeadAttention",
    "Seq2Seq", "TrainParams", "TrainResult", "UnitClassifier", "beam_search", "decode_batch",
    "featurize_series", "featurize_trace", "greedy_decode", "load_model", "load_state", "pad_batch",
    "paper_preset", "pretrain_units", "save_model", "save_state", "toy_preset", "train_seq2seq",
    "unit_accuracy",
]
