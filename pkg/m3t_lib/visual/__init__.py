from .feature_map import FeatureMap
from .backbone import BackboneConfig, SEConvBackbone, backbone_forward, squeeze_excite
from .lesion_gate import (LesionGateParams, LesionContextualGate, GateOutput, global_attention_pool,
                          channel_context, lesion_gate, contextual_gate, pooling_weights)
from .feature_io import save_features, load_features
from .heatmap import export_gate_heatmap, render_overlay
