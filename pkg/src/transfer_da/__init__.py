"""Transfer-operator (DATO) and density-operator (QMDA) data assimilation with cost instrumentation."""

from .complexity import (
    CostReport,
    DatoConfig,
    OpCounters,
    QmdaConfig,
    breakeven,
    dato_costs,
    qmda_costs,
    ratio_curve,
)
from .dato import DatoModel, DatoState, dato_analyze, dato_fit, dato_init_state, dato_predict
from .dynamics import L63Params, ObservationModel, Trajectory, integrate_l63, make_training_set
from .qmda import DensityOperator, QmdaModel, qmda_evolve, qmda_fit, qmda_init_state, qmda_probabilities, qmda_update

__version__ = "0.1.0"

__all__ = [
    "CostReport",
    "DatoConfig",
    "DatoModel",
    "DatoState",
    "DensityOperator",
    "L63Params",
    "ObservationModel",
    "OpCounters",
    "QmdaConfig",
    "QmdaModel",
    "Trajectory",
    "breakeven",
    "dato_analyze",
    "dato_costs",
    "dato_fit",
    "dato_init_state",
    "dato_predict",
    "integrate_l63",
    "make_training_set",
    "qmda_costs",
    "qmda_evolve",
    "qmda_fit",
    "qmda_init_state",
    "qmda_probabilities",
    "qmda_update",
    "ratio_curve",
]
