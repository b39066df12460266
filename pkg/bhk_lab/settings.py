import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'bhk-lab-local-key')
DEBUG = os.getenv('DEBUG', 'False') == 'True'

ALLOWED_HOSTS = []

# Only the numerical app: settings, management commands and the test runner
# come from Django, nothing else is wired.
INSTALLED_APPS = [
    'core',
]

# No persistence layer; every test is a SimpleTestCase.
DATABASES = {}

USE_TZ = True
TIME_ZONE = 'UTC'

# ============================================================================
# LOGGING
# ============================================================================
BHK_LOG_LEVEL = os.getenv('BHK_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'core': {
            'handlers': ['console'],
            'level': BHK_LOG_LEVEL,
            'propagate': False,
        },
    },
}

# ============================================================================
# NUMERICS
# ============================================================================
# .env examples:
# BHK_THREADS=4
# BHK_OUTPUT_DIR=/tmp/bhk-runs
# BHK_CEILINGS_FILE=/path/to/ceilings.json
# BHK_STRICT_CEILINGS=True
#
# BHK_THREADS caps joblib workers and the scipy.fft `workers=` argument.
# ============================================================================
BHK_THREADS = max(1, int(os.getenv('BHK_THREADS', '1')))

BHK_OUTPUT_DIR = Path(os.getenv('BHK_OUTPUT_DIR', str(BASE_DIR / 'runs')))
BHK_CEILINGS_FILE = Path(os.getenv('BHK_CEILINGS_FILE', str(BASE_DIR / 'configs' / 'ceilings.json')))
# strict runs fail on a missing ceiling instead of measuring it inline
BHK_STRICT_CEILINGS = os.getenv('BHK_STRICT_CEILINGS', 'False') == 'True'

# Radius (in cells) of the flat core that replaces the origin singularity of
# the |x|^{-a} preset.
BHK_POWER_CORE_CELLS = float(os.getenv('BHK_POWER_CORE_CELLS', '8'))

# Geometric time grid used by the mild solver unless a config overrides it.
BHK_TIME_GRID = {
    'rho': float(os.getenv('BHK_TIME_RHO', str(2 ** 0.25))),
    't_min': float(os.getenv('BHK_TIME_MIN', '1e-3')),
    'T': float(os.getenv('BHK_TIME_MAX', '4.0')),
}

# ============================================================================
# ACCEPTANCE KNOBS
# ============================================================================
# Every ceiling/tolerance an experiment asserts against lives here or in the
# experiment config; reports echo the values they used.
# ============================================================================
BHK_ACCEPTANCE = {
    'self_similar_tol': float(os.getenv('BHK_SELF_SIMILAR_TOL', '0.05')),
    'weakstar_slack': float(os.getenv('BHK_WEAKSTAR_SLACK', '0.15')),
    'ceiling_factor': float(os.getenv('BHK_CEILING_FACTOR', '1.5')),
    'ceiling_stability': float(os.getenv('BHK_CEILING_STABILITY', '0.2')),
    'criticality_tol': float(os.getenv('BHK_CRITICALITY_TOL', '0.1')),
    'contraction_max': float(os.getenv('BHK_CONTRACTION_MAX', '0.9')),
    'truncation_tail': float(os.getenv('BHK_TRUNCATION_TAIL', '0.05')),
    'asymptotic_ratio': float(os.getenv('BHK_ASYMPTOTIC_RATIO', '0.1')),
    'morrey_growth_min': float(os.getenv('BHK_MORREY_GROWTH_MIN', '1.2')),
    'heat_rate_slack': float(os.getenv('BHK_HEAT_RATE_SLACK', '0.1')),
}
