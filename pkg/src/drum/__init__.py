"""Personalized text-to-image conditioning engine.

Profiles a user's prompt history with greedy coreset selection, fuses
reference conditions with a target condition through a cross-attention
adapter, and controls personalization strength with preference-weighted
attention guidance. Includes a reconstruction trainer with hand-written
gradients and an evaluation harness for alignment metrics.
"""

__version__ = "0.1.0"

from .adapter import (AdapterParams, PersonalizationRequest,  # noqa: F401
                      PersonalizationResult, forward, init_adapter,
                      load_params, save_params)
from .coreset import (CoresetConfig, UserProfile, coreset_sample,  # noqa: F401
                      oracle_coreset, sim_clip)
from .corpus import (EmbeddingCorpus, PromptRecord, SyntheticSpec,  # noqa: F401
                     gen_synthetic, load_corpus, save_corpus)
from .errors import (CorpusFormatError, DegenerateGuidanceError,  # noqa: F401
                     DegenerateInputError, DrumError, TruncatedCorpusError,
                     ValidationError)
from .evaluation import (EvalReport, evaluate_corpus, run_ablation,  # noqa: F401
                         run_alpha_sweep, run_sampling_sweep, text_align)
from .guidance import (GuidanceConfig, Segment, SegmentedScores,  # noqa: F401
                       fused_weights, guide_class_embeddings, guided_weights)
from .trainer import (GradCheckExample, TrainConfig, TrainReport,  # noqa: F401
                      grad_check, recon_loss, toy_config, train)
