"""Finite-difference check of every tensor on the toy network, for all variants.

    python scripts/gradcheck.py
"""
from tann.gradcheck import check_gradients, report, toy_setup
from tann.model import VARIANTS, LossWeights


def main():
    failed = False
    for variant in VARIANTS:
        net, X, y, dom = toy_setup()
        checks = check_gradients(net, X, y, dom, LossWeights.resolve(variant))
        print(f"--- {variant}")
        print(report(checks))
        failed |= not all(c.ok for c in checks)
    raise SystemExit(1 if failed else 0)


if __name__ == "__main__":
    main()
