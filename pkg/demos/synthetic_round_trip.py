"""Build H2 from random canonical data, recover it, trivialize it and extend conservation laws."""

import argparse

from hamperturb import (
    Perturbation,
    build_h2_canonical,
    extend_claw,
    quasi_trivialize,
    render,
    sampling_seed,
    second_order_check,
)
from hamperturb.casebook import synthetic_instance


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--base", choices=("waterwave", "diagonal"), default=None)
    args = p.parse_args(argv)

    with sampling_seed(args.seed):
        sys, ch, C, phi, sample = synthetic_instance(args.seed, args.base)
        rws = ch.rws
        print("C   =", [render(c, rws) for c in C])
        print("phi =", [render(f, rws) for f in phi])
        H2 = build_h2_canonical(ch, C, phi)
        print("h2  =", render(H2.density, rws))
        pert = Perturbation(sys, ch, None, H2)
        so = second_order_check(pert)
        print("second order:", so.verdict, " recovered C =", [render(c, rws) for c in so.C])
        q = quasi_trivialize(pert, so)
        print("K1  =", render(q.K1.density, rws))
        print("{H0,K1} = H2:", q.bracket_check.zero, " log terms cancel:", q.log_free)
        for f0 in sample:
            ext = extend_claw(pert, f0, q)
            print(f"  extend {render(f0, sys.ws)}: {ext.verdict}  F2 = {render(ext.F2, rws)}")


if __name__ == "__main__":
    main()
