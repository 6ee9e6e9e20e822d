"""Neural adaptive outer-loop control of flexible-joint robots, in simulation."""
from .control import (ControllerFault, Gains, ReferenceState, adapt_output_layer,
                      adaptive_control, lyapunov_value, pd_control, reference_signals)
from .dynamics import (AnalyticRegressor, DynamicsError, FrictionModel, RobotModel, RobotState,
                       coriolis_matrix, full_accel, gravity_torque, link_accel_reduced,
                       mass_matrix, step_rk4, true_parameters)
from .network import (AdamState, OutputLayer, RegressorNet, TrainBatch, backprop,
                      forward_regressor, init_regressor, load_network, retrain_online,
                      save_network, train_offline)
from .scenario import (ADAPTIVE, ADAPTIVE_RETRAIN, PD, AttachPayload, BeginBuffering,
                       EnableAdaptation, Event, RetrainNow, Scenario, Sinusoid, SwitchFriction,
                       collect_dataset, compute_metrics, export_csv, gen_multisine,
                       gen_sinusoid_family, run_scenario)
from .config import ExperimentConfig, load_config, load_preset

__version__ = "0.1.0"
