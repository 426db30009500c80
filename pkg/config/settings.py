# Configuration file for the LSH kernel-approximation toolkit

import logging
import os

import numpy as np
from dotenv import load_dotenv

# Pick up LSHK_* overrides from a local .env file
load_dotenv()

# Application settings
APP_CONFIG = {
    'name': 'lsh-kernel-lab',
    'title': 'LSH / RFF Kernel Approximation for Point Clouds',
    'version': '0.3.0',
}

# Point-cloud generation and neighborhood settings
GEOMETRY_CONFIG = {
    'side': 10.0,                 # square side of the full-scale numerical study
    'full_scale_n': 30000,
    'desk_scale_n': 3000,
    'knn_k': 64,
    'knn_method': 'brute',        # 'brute' or 'grid'
    'knn_chunk_rows': 256,
    'grid_points_per_cell': 4.0,
    'symmetric_support': False,   # directed k-NN by default
    'histogram_bins': 50,
}

# Kernel settings
KERNEL_CONFIG = {
    'pair_chunk_rows': 512,       # rows per block when scanning all ordered pairs
}

# Hash function settings
LSH_CONFIG = {
    'bucket_width': 1.0,
    'tables': 1,
    'functions_per_table': 1,
    'mc_trials': 1_000_000,
    'collision_grid': [0.25, 0.5, 1.0, 2.0, 4.0],
    'bucket_split_concentration': 8.0,  # Dirichlet concentration when splitting G across aux hashes
}

# Approximation estimator settings
APPROX_CONFIG = {
    'schemes': ['rff', 'or_only', 'or_and'],
    'estimator': 'truncated',     # 'truncated' (acceptance) or 'gaussian'
    'min_seeds': 20,
}

# Tradeoff sweep presets
SWEEP_CONFIG = {
    'desk': {
        'n': 3000,
        'r_values': [round(float(r), 2) for r in np.arange(0.01, 5.0, 0.05)[::4]],
        'm1_values': [1, 2, 3, 4, 6, 8, 12, 16, 20],
        'm2_values': [1, 2, 3, 4, 5, 6, 8, 10, 12, 16, 20],
        'D_values': [2, 4, 8, 16, 32, 64, 128, 256, 512, 1024],
        'seeds': 20,
        'n_budgets': 24,
    },
    'desk_full': {
        'n': 3000,
        'r_values': [round(float(r), 2) for r in np.arange(0.01, 5.0, 0.05)],
        'm1_values': list(range(1, 21)),
        'm2_values': list(range(1, 21)),
        'D_values': [2, 4, 8, 16, 32, 64, 128, 256, 512, 1024],
        'seeds': 20,
        'n_budgets': 24,
    },
    'full': {
        'n': 30000,
        'r_values': [round(float(r), 2) for r in np.arange(0.01, 5.0, 0.05)],
        'm1_values': list(range(1, 21)),
        'm2_values': list(range(1, 21)),
        'D_values': [2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048],
        'seeds': 20,
        'n_budgets': 32,
    },
    'presets': {
        'desk': 'n = 3000, every 4th r and a coarse m1 grid (default)',
        'desk_full': 'n = 3000, r 0.01..4.96 step 0.05, m1 and m2 1..20',
        'full': 'n = 30000, r 0.01..4.96 step 0.05, m1 and m2 1..20 (slow)',
    },
    'default_preset': 'desk',
    'master_seed': int(os.getenv('LSHK_MASTER_SEED', 0)),
    'jobs': int(os.getenv('LSHK_JOBS', 1)),
}

# HEPT attention settings (forward pass only)
ATTENTION_CONFIG = {
    'tables': 3,
    'coord_hashes': 2,            # d'
    'total_buckets': 8.0,         # G
    'block_size': 100,
    'heads': 8,
    'hidden': 24,
    'layers': 4,
    'omega': 0.5,
    'ffn_width': 48,
    'ln_eps': 1e-5,
    'qk_aux_hashes': 0,           # ablation only
    'dense_cap': int(os.getenv('LSHK_DENSE_CAP', 5000)),
}

# Command-line settings
CLI_CONFIG = {
    'float_format': '%.17g',
    'manifest_suffix': '.manifest.json',
    'exit_codes': {'ok': 0, 'usage': 2, 'validation': 3, 'io': 4},
}

# Independent random streams split from one master seed
SEED_STREAMS = {
    'cloud': 0,
    'rff': 1,
    'lsh': 2,
    'attention': 3,
    'collision': 4,
    'transformer': 5,
}

# Logging settings
LOG_CONFIG = {
    'level': os.getenv('LSHK_LOG_LEVEL', 'WARNING'),
    'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
}


def setup_logging(level=None):
    """Configure the root logger from LOG_CONFIG"""
    logging.basicConfig(
        level=(level or LOG_CONFIG['level']).upper(),
        format=LOG_CONFIG['format'],
    )


def derive_seed(master_seed, *keys):
    """Split a master seed into an independent child seed via a counter key"""
    sequence = np.random.SeedSequence([int(master_seed), *[int(k) for k in keys]])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])
