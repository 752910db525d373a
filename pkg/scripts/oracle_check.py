"""Compare sampler output with the exact fixed-scale posterior.

With sigma_y and sigma_a pinned the model is linear-Gaussian, so posterior
means and sds are known in closed form.  Prints, per coordinate, the error
of the sampled mean in Monte Carlo standard errors and the relative sd error.
"""

import argparse

from rankmargin import synth
from rankmargin.diagnostics import mcse_mean
from rankmargin.fit import fit
from rankmargin.hmc import SamplerConfig
from rankmargin.model import make_spec


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--model", choices=("global", "country"), default="country")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--sigma-y", type=float, default=1.9)
    p.add_argument("--sigma-a", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--centered", action="store_true", help="sample abilities directly")
    args = p.parse_args(argv)

    truth = synth.default_truth(sigma_y=args.sigma_y, sigma_a=args.sigma_a, seed=args.seed,
                                country_h={"EGY": 0.05, "ENG": 0.0, "USA": 0.0})
    data = synth.generate(truth, synth.tour_schedule(args.n, seed=args.seed + 1),
                          seed=args.seed + 2)
    spec = make_spec(args.model, 30, fixed_scales=(args.sigma_y, args.sigma_a))
    draws = fit(data, spec, SamplerConfig(seed=args.seed), noncentered=not args.centered)
    oracle = synth.conjugate_oracle(data, spec, args.sigma_y, args.sigma_a)

    print(f"{'name':>8} {'oracle':>8} {'sampled':>8} {'err/MCSE':>9} {'sd err':>7}")
    worst_z = worst_sd = 0.0
    for i, name in enumerate(oracle.names):
        x = draws.draws[:, :, i]
        z = (x.mean() - oracle.mean[i]) / mcse_mean(x)
        sd = x.std(ddof=1) / oracle.sd[i] - 1
        worst_z, worst_sd = max(worst_z, abs(z)), max(worst_sd, abs(sd))
        print(f"{name:>8} {oracle.mean[i]:8.4f} {x.mean():8.4f} {z:9.2f} {100 * sd:6.1f}%")
    print(f"\nmax |err|/MCSE {worst_z:.2f}, max sd error {100 * worst_sd:.1f}%, "
          f"divergences {int(draws.divergences.sum())}")


if __name__ == "__main__":
    main()
