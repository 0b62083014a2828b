"""driftlab: few-sample domain-incremental adaptation with EWC and CFAS scoring."""
from .analysis import corruption_table, grouped_layer_variance, layer_variance
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (Dataset, DomainSpec, GlyphSpec, corrupt, generate_glyphs, load_idx,
                   rotate_quarter, sample_target_set)
from .dira import (AdaptationReport, CandidateResult, CFASConfig, HyperGrid, adapt_supervised, cfas,
                   finetune, select_best)
from .dira_ss import (JointLossConfig, YModel, adapt_self_supervised, build_y_model,
                      compute_y_fisher, make_rotation_batch, pretrain_joint)
from .ewc import (AnchorParams, FisherDiagonal, compute_fisher, ewc_gradient, ewc_penalty,
                  regularized_step)
from .network import (LayerSpec, Network, TrainLoopState, accuracy, backward, cross_entropy,
                      forward, sgd_step, train)

__version__ = "0.1.0"
