from .decoder import (DecoderParams, DecoderOutput, DescriptionDecoder, decoder_forward, embed_positions,
                      sinusoidal_table)
from .search import GreedySearch, BeamSearch, greedy_decode, beam_decode, make_strategy
