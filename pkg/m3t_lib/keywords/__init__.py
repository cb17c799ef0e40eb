from .keyword_encoder import (KeywordAttentionParams, KeywordAttentionOutput, KeywordEncoder,
                              embed_keywords, align_scores, keyword_attention)
