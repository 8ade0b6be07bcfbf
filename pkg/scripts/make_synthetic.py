"""Write the bundled two-regime synthetic dataset to data/synthetic/.

Daily log returns alternate between two equicorrelated regimes (mean
correlation 0.2 and 0.6) in blocks of 60 trading days. With 20-day epochs
shifted by 20 days every epoch lies inside a single regime, so truth.csv
gives the planted regime of each frame.

    python scripts/make_synthetic.py [--out data/synthetic]
"""

import argparse
from pathlib import Path

from marketstates.ingest import write_wide_csv
from marketstates.synthetic import alternating, equicorrelation, regime_price_panel

N_ASSETS = 30
N_DAYS = 1200
BLOCK = 60
EPOCH = 20
MUS = (0.2, 0.6)
SEED = 20200101

CONFIG = """\
# two planted regimes; shift == length so every epoch is regime-pure
[input]
prices = "prices.csv"
return_kind = "log"

[epochs]
length = {epoch}
shift = {epoch}

[scan]
epsilons = [0.0, 0.3, 0.5]
k_min = 2
k_max = 4
restarts = 200

[run]
seed = 7
output = "out"
"""


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data" / "synthetic"))
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    day_regimes = alternating(N_DAYS, 2, BLOCK)
    targets = [equicorrelation(N_ASSETS, mu) for mu in MUS]
    panel = regime_price_panel(day_regimes, targets, volatility=0.01, seed=SEED)
    write_wide_csv(panel, out / "prices.csv")

    frame_regimes = day_regimes[EPOCH - 1 :: EPOCH]
    lines = ["frame,tau,regime"] + [f"{i},{(i + 1) * EPOCH - 1},{r}" for i, r in enumerate(frame_regimes)]
    (out / "truth.csv").write_text("\n".join(lines) + "\n")
    (out / "config.toml").write_text(CONFIG.format(epoch=EPOCH))
    print(f"wrote {panel.n_assets} assets x {panel.n_dates} days, {len(frame_regimes)} frames to {out}")


if __name__ == "__main__":
    main()
