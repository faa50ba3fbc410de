"""Raw-window bytes versus replay-snapshot bytes for the three dataset shapes."""

import numpy as np

from streamhar.features import EmbeddingSample
from streamhar.replay import ReplayBuffer, snapshot_bytes

# name: (classes, replay N, window samples, channels)
SHAPES = {
    "PAMAP2": (12, 20, 512, 52),
    "HAPT": (12, 15, 128, 6),
    "DSADS": (19, 20, 125, 45),
}


def main(d=128):
    print(f"{'dataset':8s} {'raw windows':>12s} {'snapshot':>10s} {'ratio':>7s} {'payload ratio':>14s}")
    for name, (n_cls, N, W, C) in SHAPES.items():
        buf = ReplayBuffer(N, d)
        for c in range(n_cls):
            buf.store[c] = [EmbeddingSample(np.zeros(d, np.float32), c, float(t)) for t in range(N)]
            buf.replaced_since_retrain[c] = 0
        raw = n_cls * N * W * C * 4
        snap = len(snapshot_bytes(buf))
        print(f"{name:8s} {raw:12d} {snap:10d} {raw / snap:7.1f} {W * C / d:14.1f}")


if __name__ == "__main__":
    main()
