# Model composition, training, checkpoints and the command implementations.
