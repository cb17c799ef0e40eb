# Multi-Modal Medical Transformer (M3T), desk-scale implementation.
# Main package initializer.
# The package is organised by model stage: tensor (autodiff substrate),
# visual, keywords, fusion and decoding (the four model blocks),
# data_processing, evaluation, and core_engine (training and commands).
