from .attention import AttentionParams, AttentionOutput, multi_head_attention, causal_mask
from .feed_forward import FeedForwardParams, feed_forward
from .normalization import LayerNormParams
from .dropout import DropoutScope
from .params import collect_parameters
