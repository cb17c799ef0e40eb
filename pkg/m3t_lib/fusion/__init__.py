from .transfusion import (TransFusionParams, TransFusionEncoder, FusionOutput, image_tokens,
                          cross_attention, encoder_block)
