"""Command-line entry point: point-cloud generation, supports, collision checks,
error-vs-FLOPs sweeps, attention oracle checks and manifest replay."""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

# Add the repository root to the path when run as a script
sys.path.append(str(Path(__file__).parent.parent))

from config.settings import (  # noqa: E402
    APP_CONFIG,
    ATTENTION_CONFIG,
    CLI_CONFIG,
    GEOMETRY_CONFIG,
    LSH_CONFIG,
    SEED_STREAMS,
    SWEEP_CONFIG,
    derive_seed,
    setup_logging,
)
from utils.approx import Scheme  # noqa: E402
from utils.attention import (  # noqa: E402
    AttnInputs,
    HeptAttnConfig,
    attention_error,
    build_qk,
    dense_attention,
    hept_attention,
)
from utils.data_loader import DataLoader, RunManifest, file_sha256  # noqa: E402
from utils.errors import LshKernelError, OracleCapError, StaleInputError, ValidationError  # noqa: E402
from utils.geometry import (  # noqa: E402
    distance_histogram,
    gen_uniform_ball,
    gen_uniform_square,
    knn_support,
    radius_support,
)
from utils.lsh import E2lshFamily, collision_prob, collision_prob_bounds, collision_rate_mc  # noqa: E402
from utils.tradeoff import SweepGrid, default_budgets, pareto, run_sweep, theory_overlay  # noqa: E402

logger = logging.getLogger(__name__)

# Resolved option defaults per command; flags > --config JSON > these
COMMAND_DEFAULTS = {
    'gen': {
        'kind': 'square', 'n': SWEEP_CONFIG['desk']['n'], 'side': GEOMETRY_CONFIG['side'], 'd': 2,
        'seed': SWEEP_CONFIG['master_seed'], 'out': None,
    },
    'support': {
        'cloud': None, 'k': GEOMETRY_CONFIG['knn_k'], 'radius': None, 'method': GEOMETRY_CONFIG['knn_method'],
        'symmetric': GEOMETRY_CONFIG['symmetric_support'], 'histogram': None,
        'bins': GEOMETRY_CONFIG['histogram_bins'], 'out': None,
    },
    'collision': {
        'ratios': LSH_CONFIG['collision_grid'], 'r': LSH_CONFIG['bucket_width'], 'trials': LSH_CONFIG['mc_trials'],
        'd': 2, 'seed': SWEEP_CONFIG['master_seed'], 'dump_functions': None,
        'tables': LSH_CONFIG['tables'], 'functions': LSH_CONFIG['functions_per_table'], 'out': None,
    },
    'sweep': {
        'cloud': None, 'support': None, 'k': GEOMETRY_CONFIG['knn_k'], 'preset': SWEEP_CONFIG['default_preset'],
        'schemes': [s.value for s in Scheme], 'r': None, 'm1': None, 'm2': None, 'D': None, 'seeds': None,
        'budgets': None, 'budget_unit': 'abs', 'n_budgets': None, 'master_seed': SWEEP_CONFIG['master_seed'],
        'jobs': SWEEP_CONFIG['jobs'], 'reports': None, 'theory': None, 'out': None,
    },
    'attn-check': {
        'cloud': None, 'n': 2000, 'side': GEOMETRY_CONFIG['side'], 'hidden': ATTENTION_CONFIG['hidden'] // ATTENTION_CONFIG['heads'],
        'tables': ATTENTION_CONFIG['tables'], 'coord_hashes': ATTENTION_CONFIG['coord_hashes'],
        'total_buckets': ATTENTION_CONFIG['total_buckets'], 'block_size': ATTENTION_CONFIG['block_size'],
        'qk_aux_hashes': ATTENTION_CONFIG['qk_aux_hashes'], 'omega': ATTENTION_CONFIG['omega'],
        'seeds': 1, 'master_seed': SWEEP_CONFIG['master_seed'], 'cap': ATTENTION_CONFIG['dense_cap'], 'out': None,
    },
}

INPUT_KEYS = ('cloud', 'support')


def build_parser():
    parser = argparse.ArgumentParser(prog=APP_CONFIG['name'], description=APP_CONFIG['title'])
    parser.add_argument('--log-level', default=None, help='overrides LSHK_LOG_LEVEL')
    parser.add_argument('--config', default=None, help='JSON file of option values (flags win)')
    commands = parser.add_subparsers(dest='command', required=True)

    gen = commands.add_parser('gen', help='generate a synthetic point cloud')
    gen.add_argument('--kind', choices=['square', 'ball'])
    gen.add_argument('--n', type=int)
    gen.add_argument('--side', type=float)
    gen.add_argument('--d', type=int)
    gen.add_argument('--seed', type=int)
    gen.add_argument('--out')

    support = commands.add_parser('support', help='build a k-NN or radius support set')
    support.add_argument('--cloud')
    support.add_argument('--k', type=int)
    support.add_argument('--radius', type=float)
    support.add_argument('--method', choices=['brute', 'grid'])
    support.add_argument('--symmetric', action='store_true', default=None)
    support.add_argument('--histogram', help='also write the pair-distance histogram here')
    support.add_argument('--bins', type=int)
    support.add_argument('--out')

    collision = commands.add_parser('collision', help='closed-form vs Monte-Carlo collision probability')
    collision.add_argument('--ratios', type=float, nargs='+', help='z / r values')
    collision.add_argument('--r', type=float)
    collision.add_argument('--trials', type=int)
    collision.add_argument('--d', type=int)
    collision.add_argument('--seed', type=int)
    collision.add_argument('--dump-functions', dest='dump_functions')
    collision.add_argument('--tables', type=int)
    collision.add_argument('--functions', type=int)
    collision.add_argument('--out')

    sweep = commands.add_parser('sweep', help='error-vs-FLOPs sweep and Pareto curves')
    sweep.add_argument('--cloud')
    sweep.add_argument('--support')
    sweep.add_argument('--k', type=int)
    sweep.add_argument('--preset', choices=list(SWEEP_CONFIG['presets']),
                       help='; '.join(f'{name}: {text}' for name, text in SWEEP_CONFIG['presets'].items()))
    sweep.add_argument('--schemes', nargs='+', choices=[s.value for s in Scheme])
    sweep.add_argument('--r', type=float, nargs='+')
    sweep.add_argument('--m1', type=int, nargs='+')
    sweep.add_argument('--m2', type=int, nargs='+')
    sweep.add_argument('--D', type=int, nargs='+')
    sweep.add_argument('--seeds', type=int)
    sweep.add_argument('--budgets', type=float, nargs='+')
    sweep.add_argument('--budget-unit', dest='budget_unit', choices=['abs', 'nd'])
    sweep.add_argument('--n-budgets', dest='n_budgets', type=int)
    sweep.add_argument('--master-seed', dest='master_seed', type=int)
    sweep.add_argument('--jobs', type=int)
    sweep.add_argument('--reports', help='also write every run to this CSV')
    sweep.add_argument('--theory', help='also write theory-only curves calibrated on the frontier')
    sweep.add_argument('--out')

    attn = commands.add_parser('attn-check', help='HEPT attention against the dense oracle')
    attn.add_argument('--cloud')
    attn.add_argument('--n', type=int)
    attn.add_argument('--side', type=float)
    attn.add_argument('--hidden', type=int)
    attn.add_argument('--tables', type=int)
    attn.add_argument('--coord-hashes', dest='coord_hashes', type=int)
    attn.add_argument('--total-buckets', dest='total_buckets', type=float)
    attn.add_argument('--block-size', dest='block_size', type=int)
    attn.add_argument('--qk-aux-hashes', dest='qk_aux_hashes', type=int)
    attn.add_argument('--omega', type=float)
    attn.add_argument('--seeds', type=int)
    attn.add_argument('--master-seed', dest='master_seed', type=int)
    attn.add_argument('--cap', type=int)
    attn.add_argument('--out')

    replay = commands.add_parser('replay', help='re-run a manifest and rewrite its outputs')
    replay.add_argument('manifest')
    return parser


def resolve_config(command, args, file_config=None):
    """Merge settings defaults, the JSON config and explicit flags"""
    defaults = COMMAND_DEFAULTS[command]
    file_config = file_config or {}
    file_config = file_config.get(command, file_config)
    unknown = [k for k in file_config if k not in defaults and k not in COMMAND_DEFAULTS]
    if unknown:
        raise ValidationError(f"unknown {command} options in config: {', '.join(sorted(unknown))}")

    config = dict(defaults)
    config.update({k: v for k, v in file_config.items() if k in defaults})
    config.update({k: v for k, v in vars(args).items() if k in defaults and v is not None})
    if config.get('out') is None:
        raise ValidationError(f"{command} needs --out")
    return config


def _write_manifest(loader, command, config, master_seed):
    inputs = [config[k] for k in INPUT_KEYS if config.get(k)]
    manifest = RunManifest.for_inputs(command, config, master_seed, inputs, [config['out']])
    return loader.save_manifest(manifest, config['out'])


def cmd_gen(config, loader):
    if config['kind'] == 'square':
        cloud = gen_uniform_square(config['n'], config['side'], config['seed'])
    else:
        cloud = gen_uniform_ball(config['n'], config['d'], config['seed'])
    loader.save_cloud(cloud, config['out'])
    print(f"✅ Generated {cloud.n} points ({config['kind']}) -> {config['out']}")
    return config['seed']


def cmd_support(config, loader):
    if not config['cloud']:
        raise ValidationError("support needs --cloud")
    cloud = loader.load_cloud(config['cloud'])
    if config['radius'] is not None:
        support = radius_support(cloud, config['radius'])
    else:
        support = knn_support(cloud, config['k'], config['method'], config['symmetric'])
    loader.save_support(support, config['out'])
    print(f"✅ Support with {len(support)} ordered pairs -> {config['out']}")

    if config['histogram']:
        histogram = distance_histogram(cloud, config['bins'])
        frame = pd.DataFrame({'low': histogram.edges[:-1], 'high': histogram.edges[1:], 'mass': histogram.masses})
        loader.save_frame(frame, config['histogram'])
        print(f"✅ Distance histogram -> {config['histogram']}")
    return 0


def cmd_collision(config, loader):
    r, trials = config['r'], config['trials']
    if trials < 1:
        raise ValidationError(f"need at least one trial, got {trials}")
    rows = []
    for index, ratio in enumerate(config['ratios']):
        z = ratio * r
        rate, stderr = collision_rate_mc(z, r, trials, derive_seed(config['seed'], SEED_STREAMS['collision'], index),
                                         config['d'])
        lower, upper = collision_prob_bounds(z, r)
        rows.append({'z_over_r': ratio, 'analytic': collision_prob(z, r), 'mc': rate, 'mc_stderr': stderr,
                     'lower': lower, 'upper': upper})
    frame = pd.DataFrame(rows)
    loader.save_frame(frame, config['out'])

    outside = frame[(frame['analytic'] < frame['lower']) | (frame['analytic'] > frame['upper'])]
    if not outside.empty:
        print(f"⚠️ {len(outside)} rows fall outside the bounds")
    print(f"✅ Collision table for {len(rows)} ratios ({trials} trials each) -> {config['out']}")

    if config['dump_functions']:
        family = E2lshFamily(config['d'], derive_seed(config['seed'], SEED_STREAMS['lsh']))
        functions = [(t, s, family.function(t, s, r)) for t in range(config['tables']) for s in range(config['functions'])]
        loader.save_hash_functions(functions, config['dump_functions'])
        print(f"✅ Dumped {len(functions)} hash functions -> {config['dump_functions']}")
    return config['seed']


def cmd_sweep(config, loader):
    if not config['cloud']:
        raise ValidationError("sweep needs --cloud")
    cloud = loader.load_cloud(config['cloud'])
    if config['support']:
        support = loader.load_support(config['support'], cloud.n)
    else:
        support = knn_support(cloud, config['k'])

    preset = SWEEP_CONFIG[config['preset']]
    grid = SweepGrid.from_preset(
        config['preset'], r_values=config['r'], m1_values=config['m1'], m2_values=config['m2'],
        D_values=config['D'], seeds=config['seeds'], schemes=config['schemes'], master_seed=config['master_seed'],
    )
    if config['budgets']:
        scale = cloud.n * cloud.k2 if config['budget_unit'] == 'nd' else 1
        budgets = sorted(int(round(b * scale)) for b in config['budgets'])
    else:
        budgets = default_budgets(cloud.n, cloud.k2, config['n_budgets'] or preset['n_budgets'])
    grid = grid.with_budgets(budgets)

    print(f"🔄 Sweeping {len(grid.schemes)} schemes over {grid.seeds} seeds on {cloud.n} points")
    reports = run_sweep(cloud, support, grid, jobs=config['jobs'])
    frontier = pareto(reports, grid.budgets)
    loader.save_curves(frontier, config['out'])
    if config['reports']:
        loader.save_reports(reports, config['reports'])
    if config['theory']:
        overlay = theory_overlay(frontier, cloud.n, cloud.k2, len(support) / cloud.n, grid.budgets)
        loader.save_frame(overlay, config['theory'])
        print(f"✅ Theory curves for {overlay['scheme'].nunique()} schemes -> {config['theory']}")

    for scheme in grid.schemes:
        points = [p for p in frontier if p.scheme is scheme]
        flagged = sum(p.flagged for p in points)
        if flagged:
            print(f"⚠️ {scheme.value}: {flagged} of {len(points)} budgets have no feasible config")
        print(f"✅ {scheme.value}: {len(points) - flagged} frontier points")
    return grid.master_seed


def _attention_instance(config, loader, seed):
    if config['cloud']:
        rho = loader.load_cloud(config['cloud']).coords
    else:
        rho = gen_uniform_square(config['n'], config['side'], derive_seed(seed, SEED_STREAMS['cloud'])).coords
    rng = np.random.default_rng(derive_seed(seed, SEED_STREAMS['transformer']))
    hidden = config['hidden']
    H = rng.standard_normal((rho.shape[0], hidden))
    weights = [rng.standard_normal((hidden, hidden)) / np.sqrt(hidden) for _ in range(3)]
    return AttnInputs(H, rho, *weights, omega=config['omega'])


def cmd_attn_check(config, loader):
    cap = config['cap']
    if config['seeds'] < 1:
        raise ValidationError(f"attn-check needs at least one seed, got {config['seeds']}")
    errors, masses, flagged = [], [], 0
    for index in range(config['seeds']):
        seed = derive_seed(config['master_seed'], index)
        inputs = _attention_instance(config, loader, seed)
        if inputs.n > cap:
            raise OracleCapError(f"dense oracle is capped at n = {cap}, got n = {inputs.n}")
        attn_config = HeptAttnConfig(
            tables=config['tables'], coord_hashes=config['coord_hashes'], total_buckets=config['total_buckets'],
            block_size=config['block_size'], heads=1, seed=derive_seed(seed, SEED_STREAMS['attention']),
            qk_aux_hashes=config['qk_aux_hashes'],
        )
        Q, K, V = build_qk(inputs)
        hept = hept_attention(Q, K, V, inputs.rho, attn_config)
        error, mass = attention_error(hept, dense_attention(Q, K, V, cap=cap))
        errors.append(error)
        masses.append(mass)
        flagged += int(hept.flagged_rows.size)
        print(f"   seed {index}: relative error {error:.3e}, captured mass {mass:.4f}, flagged rows {hept.flagged_rows.size}")

    summary = {
        'relative_error': errors, 'captured_mass': masses,
        'mean_relative_error': float(np.mean(errors)), 'mean_captured_mass': float(np.mean(masses)),
        'flagged_rows_total': flagged,
    }
    loader.save_attention(hept, config['out'], extra=summary)
    if flagged:
        print(f"⚠️ {flagged} query rows shared no block with any key")
    print(f"✅ Mean relative error {summary['mean_relative_error']:.3e}, "
          f"mean captured mass {summary['mean_captured_mass']:.4f} -> {config['out']}")
    return config['master_seed']


HANDLERS = {
    'gen': cmd_gen,
    'support': cmd_support,
    'collision': cmd_collision,
    'sweep': cmd_sweep,
    'attn-check': cmd_attn_check,
}


def run_command(command, config, loader):
    master_seed = HANDLERS[command](config, loader)
    path = _write_manifest(loader, command, config, master_seed)
    logger.info("manifest written to %s", path)
    return 0


def cmd_replay(manifest_path, loader):
    manifest = loader.load_manifest(manifest_path)
    if manifest.command not in HANDLERS:
        raise ValidationError(f"manifest names unknown command '{manifest.command}'")
    print(f"🔄 Replaying {manifest.command} from {manifest_path}")
    unknown = [k for k in manifest.config if k not in COMMAND_DEFAULTS[manifest.command]]
    if unknown:
        raise ValidationError(f"manifest has unknown options: {', '.join(sorted(unknown))}")
    for path, digest in manifest.inputs.items():
        if file_sha256(path) != digest:
            raise StaleInputError(f"input {path} changed since the recorded run")
    return run_command(manifest.command, {**COMMAND_DEFAULTS[manifest.command], **manifest.config}, loader)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    loader = DataLoader()

    try:
        if args.command == 'replay':
            return cmd_replay(args.manifest, loader)
        file_config = loader.load_json(args.config) if args.config else None
        config = resolve_config(args.command, args, file_config)
        return run_command(args.command, config, loader)
    except LshKernelError as e:
        print(f"❌ {e}")
        message = str(e).replace('\n', ' ')
        print(f"error code={e.code} type={type(e).__name__} message={message}", file=sys.stderr)
        return e.code if e.code in CLI_CONFIG['exit_codes'].values() else 1


if __name__ == "__main__":
    sys.exit(main())
