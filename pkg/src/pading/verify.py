"""Built-in verification battery used by ``pading verify``.

Each check returns a :class:`Check`; the battery passes when all of them do.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nx
from .align import REAL_SEEN, SYN_SEEN, SYN_UNSEEN, AlignBatch, AlignConfig, alignment_loss
from .data import SyntheticSpec, make_synthetic_dataset, toy_semantic_space
from .disentangle import disentangle_pass
from .generator import MmdConfig, mmd_loss
from .numerics import grad_check
from .pipeline import TrainConfig, class_conditional_mmd, class_pools, generator_step_loss, harmonic_mean, new_bundle

GRAD_RTOL = 1e-3
GRAD_EPS = 1e-5

# (seen, unseen, printed HM) as reported to one decimal
PUBLISHED_HM = ((41.5, 15.3, 22.3), (53.0, 8.0, 13.9), (43.0, 3.6, 6.7))


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def micro_problem(seed=0):
    """A 4-class (3 seen + 1 unseen) problem small enough for finite differences."""
    space = toy_semantic_space(n_seen=3, n_unseen=1, dim=5, n_groups=2, seed=seed)
    spec = SyntheticSpec(d_a=5, d_x=8, nuisance_dim=3, samples_per_class=6, seed=seed, related_scale=2.0)
    train, _ = make_synthetic_dataset(space, spec)
    cfg = TrainConfig(ablation="full", lam=0.5, d_k=6, n_primitives=10, layer_count=2,
                      real_per_class=3, unseen_per_class=3)
    return space, train, cfg


def micro_losses(seed=0):
    """Map loss name -> (zero-arg loss function, parameter list) on one micro-batch."""
    space, train, cfg = micro_problem(seed)
    bundle = new_bundle(space, train.dim, cfg, seed=seed)
    gen, dis = bundle.generator, bundle.disentangler
    params = gen.params() + dis.params()
    pools = class_pools(train, space)
    mmd_cfg = MmdConfig((1.0, 2.0, 5.0))

    def parts():
        rng = np.random.default_rng(seed + 100)
        real_idx = np.concatenate([rng.choice(pools[c], 3, replace=False) for c in space.seen_ids])
        labels = train.labels[real_idx]
        syn = gen(space.embeddings[labels], gen.sample_noise(len(labels), rng))
        un_labels = np.repeat(space.unseen_ids, 3)
        syn_un = gen(space.embeddings[un_labels], gen.sample_noise(len(un_labels), rng))
        rows = nx.concat_rows([nx.Tensor(train.features[real_idx]), syn, syn_un])
        all_labels = np.concatenate([labels, labels, un_labels])
        origins = [REAL_SEEN] * len(labels) + [SYN_SEEN] * len(labels) + [SYN_UNSEEN] * len(un_labels)
        out = disentangle_pass(dis, rows, all_labels, space, train_mode=True, rng=rng)
        return {
            "L_G": class_conditional_mmd(train.features[real_idx], labels, syn, labels, mmd_cfg),
            "L_R": out.l_related,
            "L_U": out.l_unrelated,
            "L_recon": out.l_recon,
            "L_A": alignment_loss(AlignBatch(out.x_hat, all_labels, origins), space, AlignConfig()),
        }

    losses = {name: (lambda name=name: parts()[name], params) for name in ("L_G", "L_R", "L_U", "L_recon", "L_A")}
    losses["L_total"] = (lambda: generator_step_loss(bundle, train, space, cfg, mmd_cfg,
                                                     np.random.default_rng(seed + 200), pools).total, params)
    return losses


def check_gradients(seed=0, probe_count=25):
    checks = []
    for name, (fn, params) in micro_losses(seed).items():
        report = grad_check(fn, params, probe_count=probe_count, eps=GRAD_EPS, seed=seed)
        checks.append(Check(f"grad {name}", report.passed(GRAD_RTOL),
                            f"max rel error {report.max_rel_error:.2e} (rtol {GRAD_RTOL:g})"))
    return checks


def check_mmd(trials=100, seed=0):
    gen = np.random.default_rng(seed)
    self_worst, sym_worst = 0.0, 0.0
    for _ in range(trials):
        n, m, d = gen.integers(1, 8, size=3)
        x, y = gen.standard_normal((n, d)) * 3, gen.standard_normal((m, d)) * 3
        self_worst = max(self_worst, abs(mmd_loss(x, x).item()))
        sym_worst = max(sym_worst, abs(mmd_loss(x, y).item() - mmd_loss(y, x).item()))
    pair = mmd_loss([[0.0, 0.0]], [[2.0, 0.0]], MmdConfig((2.0,))).item()
    pair_err = abs(pair - (2 - 2 * math.exp(-0.5)))
    return [
        Check("mmd self-distance", self_worst <= 1e-12, f"max |MMD(X,X)| = {self_worst:.1e} over {trials} sets"),
        Check("mmd symmetry", sym_worst <= 1e-12, f"max asymmetry {sym_worst:.1e}"),
        Check("mmd single pair", pair_err <= 1e-9, f"|{pair:.12f} - (2 - 2e^-0.5)| = {pair_err:.1e}"),
    ]


def check_alignment_fixed_point(seed=0):
    gen = np.random.default_rng(seed)
    semantic = nx.l2_normalize_rows(gen.standard_normal((5, 6))).rows
    labels = gen.integers(0, 5, 9)
    origins = [REAL_SEEN, SYN_SEEN, SYN_UNSEEN] * 3
    checks = []
    for name, cfg in (("intra", AlignConfig(include_inter=False)), ("inter", AlignConfig(include_intra=False)),
                      ("combined", AlignConfig())):
        value = alignment_loss(AlignBatch(semantic[labels], labels, origins), semantic, cfg).item()
        checks.append(Check(f"alignment zero at match ({name})", abs(value) <= 1e-9, f"loss {value:.1e}"))
    return checks


def hm_interval(seen, unseen, half_width=0.05):
    """Range of HM over inputs within ``half_width`` of the printed values (HM is monotone in both)."""
    return harmonic_mean(seen - half_width, unseen - half_width), harmonic_mean(seen + half_width, unseen + half_width)


def check_published_hm():
    """Printed HM values must be reachable from their printed (rounded) inputs."""
    checks = []
    for seen, unseen, printed in PUBLISHED_HM:
        exact = harmonic_mean(seen, unseen)
        lo, hi = hm_interval(seen, unseen)
        # the printed HM is itself rounded, so it may sit up to 0.05 outside the range
        ok = lo - 0.05 <= printed <= hi + 0.05
        checks.append(Check(f"HM({seen}, {unseen})", ok,
                            f"{exact:.3f} from printed inputs, reachable range [{lo:.3f}, {hi:.3f}], "
                            f"printed {printed}"))
    return checks


def run_battery(seed=0):
    return check_gradients(seed) + check_mmd(seed=seed) + check_alignment_fixed_point(seed) + check_published_hm()
