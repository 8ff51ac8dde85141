"""EV charging-session duration prediction.

A CC-CV battery simulator generates ground-truth sessions; a
physics-informed gradient-boosted power model integrated over the SoC
trajectory gives fast analytical predictions; a DQN agent progressively
takes over as operational data accumulates.
"""

from .physics import (
    ChargingScenario,
    DegradedLimits,
    DomainError,
    PhysicsParams,
    TempEfficiencyModel,
    VehicleSpec,
    actual_power,
    effective_capacity,
    effective_max_power,
    pack_voltage,
    taper_factor,
    temperature_efficiency,
    vehicle_power_acceptance,
)
from .predictor import (
    IntegrationConfig,
    IntegrationError,
    PredictionResult,
    analytical_power_model,
    linear_baseline_time,
    predict_charging_time,
)
from .simulator import (
    Dataset,
    SessionRecord,
    SessionTrace,
    SimulationError,
    SimulatorConfig,
    generate_dataset,
    load_dataset,
    save_dataset,
    simulate_session,
    stratified_split,
)

__version__ = "0.1.0"
