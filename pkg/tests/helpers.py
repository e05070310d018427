import numpy as np

from mcmwc.topology import ChannelStats, SessionLayout


def homogeneous(m, n, gamma):
    layout = SessionLayout(m, [list(range(h * n, (h + 1) * n)) for h in range(m)])
    return layout, ChannelStats(np.full((m * n, m), float(gamma)))
