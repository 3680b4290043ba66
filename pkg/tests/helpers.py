"""Small problem builders shared by the test modules."""
import numpy as np

from fsisplit import FluidLaw, Laws, ProblemSetup, ReferenceGeometry, Resolution, ThinLaw
from fsisplit.constitutive import certify_constants
from fsisplit.signals import Signal

SMALL = Resolution(8, 4, 8, 2, 8)
CRITERION = Resolution(16, 8, 16, 4, 8)


def make_setup(p=3.0, cubic=0.0, pulse=0.0, res=SMALL, alpha=1.0, reduction=False, geom=None):
    law = certify_constants(FluidLaw(p=p, alpha=alpha, reduction=reduction or p == 2.0))
    thin = ThinLaw("cubic", cubic) if cubic else ThinLaw()
    P_in = Signal("pulse", pulse, 0.0, 0.2) if pulse else Signal()
    return ProblemSetup(geom or ReferenceGeometry(), res, Laws(law, thin=thin), P_in, Signal())


def random_symmetric(rng, n, scale=1.0):
    a = rng.standard_normal((n, 3)) * scale
    D = np.empty((n, 2, 2))
    D[:, 0, 0], D[:, 1, 1] = a[:, 0], a[:, 1]
    D[:, 0, 1] = D[:, 1, 0] = a[:, 2]
    return D
