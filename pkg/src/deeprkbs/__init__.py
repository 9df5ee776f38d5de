"""Deep measure networks with total-variation penalties and layer-wise sparsification."""
from .basis import (Activation, ContinuousNeural, DiscreteNeural, InputAffine, LipschitzWitness,
                    WindowSequence, evaluate_basis, lipschitz_witness)
from .errors import (AtomBudgetExceeded, CapExceeded, DimensionMismatch, DivergenceDetected, EmptyGrid,
                     FormatError, Infeasible, KindMismatch, NegativeIndex, NotUnitBall, RKBSError,
                     UnsupportedBasis)
from .measure import (Atom, AtomicVectorMeasure, Decomposition, Extreme, apply_linear_to_weights,
                      extreme_point_check, integrate, linear_combine, pushforward, tv_norm)
from .network import (DeepMeasureNetwork, FiniteNetwork, LayerMeasure, complexity_upper_bound,
                      discrete_norm_bound, export_finite, forward, forward_finite)
from .pipeline import SparsifyReport, hidden_representations, project_layer, run_representer, sparsify_layer
from .sparse_solver import (CandidateGrid, HomotopyConfig, LayerConstraintSet, SolverConfig, lmo,
                            prox_group, solve_interpolation, solve_regularized)
from .trainer import Dataset, LossFunction, TrainConfig, grad_weights, objective, risk, train_prox

__version__ = "0.1.0"
