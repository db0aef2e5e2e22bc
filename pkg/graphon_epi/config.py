from datetime import datetime
import os
from pathlib import Path

# Scenario schema
SCHEMA_VERSION = 1
MASS_TOLERANCE = 1e-12
SIMPLEX_TOLERANCE = 1e-9

# Control set A = [a_min, a_max]; recommended levels sit near 1 in every bundled scenario
DEFAULT_CONTROL_MIN = 0.0
DEFAULT_CONTROL_MAX = 2.0

# Default control reported at absorbing states where the control has no effect
ABSORBING_CONTROL = 1.0

# Graphon quadrature
DEFAULT_QUADRATURE_POINTS = 512

# Time grids (number of steps over the horizon)
BLOCK_STEPS = 2000
SHOOTING_STEPS = 400
PARTICLE_REFRESH_STEPS = 400

# Damped Picard iteration on the aggregate path
PICARD_DAMPING = 0.5
PICARD_TOLERANCE = 1e-8
PICARD_MAX_ITER = 200

# Forward integration sanity bounds
SIMPLEX_DRIFT_LIMIT = 1e-6

# Hamiltonian oracle / generic minimizer
CONTROL_GRID_POINTS = 2048
LIPSCHITZ_DELTA = 1e-4
LIPSCHITZ_Z_POINTS = 41

# Shooting network and training
NETWORK_DEPTH = 2
NETWORK_WIDTH = 32
NETWORK_ACTIVATION = "tanh"
TRAIN_ITERATIONS = 5000
TRAIN_BATCH_SIZE = 256
LEARNING_RATE = 1e-3
ADAM_BETAS = (0.9, 0.999)
# training stops when the loss grows past this multiple of the first iteration's loss
DIVERGENCE_GROWTH = 1e6
EVALUATION_POINTS = 100

# Particle simulation
PARTICLE_AGENTS = 10_000

# RNG: one scenario seed, derived per-component stream ids
STREAM_NETWORK_INIT = 1
STREAM_BATCH = 2
STREAM_PARTICLES = 1 << 32

# Output contracts
TRAJECTORY_COLUMNS = ["t", "unit", "state", "p", "u", "Z", "control"]
TRAINING_LOG_COLUMNS = ["iteration", "loss", "grad_norm", "lr", "seconds"]
EVENT_LOG_COLUMNS = ["t", "agent_id", "index", "from_state", "to_state"]
AGGREGATE_COLUMNS = ["t", "unit", "z_empirical", "z_deterministic"]
CSV_FLOAT_FORMAT = "%.12g"

# Exit codes
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NON_CONVERGENCE = 3

# Logging configuration
LOG_DIR = Path("logs")

# Generate log filename based on current date/time
LOG_FILENAME = LOG_DIR / f"graphon_epi_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"

# Debug flag - can be toggled via environment variable
DEBUG = os.environ.get("GRAPHON_EPI_DEBUG", "").lower() in ("true", "1", "yes")
