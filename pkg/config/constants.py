# Project Identity
PROJECT_NAME = 'qubit-noise-calibrator'
PROJECT_VERSION = '1.0.0'

# Qubit Configuration (hbar = 1, all energies and rates in one unit)
DEFAULT_EZ = 7.0

# Detector Configuration (gamma_m = 0.1 working point)
DEFAULT_I0 = 10.0
DEFAULT_I1 = 10.4
DEFAULT_S_I = 0.4
DEFAULT_DT = 0.05

# Step guards
STEP_SANITY_LIMIT = 0.5          # dt * ||H|| for trajectory stepping
PHYSICALITY_TOLERANCE = 1e-6     # allowed excursion of rho00 and |rho01|^2 - rho00 rho11
WEAK_MEASUREMENT_DT_LIMIT = 0.01  # dt * gamma_m
MASTER_STEP_LIMIT = 0.1          # dt * max(2 E_z, gamma_m) for the ensemble integrator
WEAK_REGIME_RATIO = 0.1          # "much smaller than" for regime warnings

# Stepping methods
STEPPING_METHODS = ['exact', 'euler']
DEFAULT_STEPPING_METHOD = 'exact'
MASTER_METHODS = ['rk4', 'expm']

# Vectorised trajectory engine
CHUNK_STEPS = 4000
EXPONENT_CLIP = 700.0

# Noise Configuration
DEFAULT_NOISE_RMS = 0.8
DEFAULT_N_COMPONENTS = 20
ALPHA_SQ_UNIT = 1.0
MIN_SPECTRUM_SAMPLES = 2 ** 14
SPECTRUM_MIN_REALIZATIONS = 32
NOISE_EVAL_BLOCK = 2_000_000      # max (time x component) cells per cosine block

# Record Pipeline Configuration
MIN_SAMPLES_PER_WINDOW = 10
DEFAULT_HYSTERESIS_FRACTION = 0.25
DEFAULT_MIN_DWELL = 2
POISSON_MIN_EXPECTED = 5.0

# Detector count response (telegraph runs through the window and trigger stages)
COUNT_RESPONSE_SEED = 20240531
COUNT_RESPONSE_WINDOWS = 1000
COUNT_RESPONSE_RATES = (0.003, 0.2)  # true switches per window, geometric grid ends
COUNT_RESPONSE_GRID = 10
COUNT_RESPONSE_SWITCHES = 40_000     # true switches simulated per grid rate
COUNT_RESPONSE_MAX_ROWS = 8000
COUNT_RESPONSE_CHUNK = 1000
SMALL_COUNT_SHIFT = 0.25             # E[sqrt(n + 1/4)] = sqrt(mean) + O(mean^-3/2) for Poisson n
EXACT_RATE_ITERATIONS = 100

# Calibration Protocol Configuration
DEFAULT_N_P = 2000
MIN_SWEEP_REPETITIONS = 20
RESIDUE_BAND = 0.15
INSET_BANDWIDTH = 1e-5
KNEE_RISE_FACTOR = 4.0            # residue rise over its narrow-band value that marks the knee
DEFAULT_BANDWIDTHS = [1e-6, 3e-6, 1e-5, 3e-5, 1e-4]
COUNT_MODEL_GRID = 2001

# Ensemble Solver Configuration
DEFAULT_MASTER_DT = 0.005
DEFAULT_CHECKPOINTS = 200
DECAY_FIT_START_FRACTION = 0.1
MIN_DECAY_SPAN = 2.0

# Gate Configuration
SUPPORTED_GATES = ['hadamard', 'phase', 'bitflip']
DEFAULT_GATE = 'bitflip'
MIN_FIDELITY_REALIZATIONS = 50
DEFAULT_GATE_DV_VALUES = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]
UNITARY_TOLERANCE = 1e-12

# Output Configuration
DEFAULT_OUTPUT_DIR = 'output'
CSV_FLOAT_FORMAT = '%.17g'
MANIFEST_FILENAME = 'manifest.json'
VISUALIZATION_FORMAT = 'svg'
VISUALIZATION_DPI = 150

# Exit codes
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3

# Environment overrides (read through python-dotenv)
ENV_OUTPUT_DIR = 'QUBITCAL_OUTPUT_DIR'
ENV_JOBS = 'QUBITCAL_JOBS'
ENV_LOG_LEVEL = 'QUBITCAL_LOG_LEVEL'

# Run presets
RUN_PRESETS = {
    'baseline': {
        'description': 'Reference working point: E_z=7, I0=10, I1=10.4, S_I=0.4 (gamma_m=0.1), n_p=2000',
        'overrides': {},
    },
    'quick': {
        'description': 'Short protocol for smoke runs (n_p=200, few repetitions)',
        'overrides': {
            'protocol': {'n_p': 200},
            'run': {'repetitions': 20},
            'gates': {'realizations': 50, 'dv_values': [0.0, 0.4, 0.8]},
            'sweep': {'bandwidths': [1e-6, 1e-4]},
        },
    },
}
