"""Lossless coding of binary codes and importance maps."""

from cwic.entropy.bitplanes import binarize_importance, debinarize_importance, plane_count
from cwic.entropy.coder import ac_decode, ac_encode, ideal_bits
from cwic.entropy.context import all_contexts, extract_context, one_hot, schedule
from cwic.entropy.models import (
    Corpus,
    EntropyModel,
    FreqTable,
    NetPredictor,
    harvest,
    load_entropy,
    masked_nll,
    predict,
    save_entropy,
    train_entropy,
)
from cwic.entropy.payload import decode_codes, decode_importance, encode_codes, encode_importance

__all__ = [
    "Corpus", "EntropyModel", "FreqTable", "NetPredictor", "ac_decode", "ac_encode",
    "all_contexts", "binarize_importance", "debinarize_importance", "decode_codes",
    "decode_importance", "encode_codes", "encode_importance", "extract_context", "harvest",
    "ideal_bits", "load_entropy", "masked_nll", "one_hot", "plane_count", "predict",
    "save_entropy", "schedule", "train_entropy",
]
