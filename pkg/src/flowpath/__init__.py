"""Source-to-sink flow-path propagation networks for node classification."""

from .estimator import FlowPathClassifier
from .exceptions import (DegenerateWalkError, EmptyInfluenceError, FormatError,
                         NumericsError, ParseError, ShapeError, TooLargeError)
from .graph import (DatasetBundle, Graph, avg_shortest_path, grid_torus,
                    k_step_rw_distribution, load_dataset)
from .influence import (InfluenceReport, flow_influence, influence_distribution,
                        influence_jacobian, tv_distance, verify_theorem)
from .model import (ModelConfig, ModelParams, TrainReport, evaluate, fit_model,
                    forward, load_checkpoint, path_batches, save_checkpoint, train)
from .propagation import (PropagationMechanism, build_propagation_matrix,
                          decay_mechanism, identity_mechanism, info_propagate,
                          mean_aggregate)
from .walks import (PathSet, WalkParams, importance_restarts, node2vec_walk,
                    pathgen, read_paths, sample_step, second_order_step_weights,
                    uniform_walks, validate_paths, write_paths)

__version__ = "0.1.0"
