"""Circuit discovery on small transformer-style graphs with ensembled edge scores."""

from .attribution import attribute, eap, eap_ig_activations, eap_ig_inputs, exact_patching, ifr_normalize
from .circuits import SIZE_GRID, CircuitSpec, greedy_circuit, topk_circuit
from .ensemble import EnsembleSpec, make_submission, reduce
from .evaluation import EvalCurve, cmd, cpr, faithfulness, objective, score_curve
from .graph import EdgeId, GraphTopology, NodeId
from .model import ModelParams, build_model
from .pruning import PruneConfig, sample_mask, train
from .scores import EdgeScoreMap
from .signs import signs_from_eapig, z_score_attribution
from .warmstart import MaskParams, hard_concrete_inverse, initialize_mask

__version__ = "0.1.0"
