"""
Exact ERGM moments by enumeration, and a DMH run checked against them
=====================================================================

On six vertices there are 2^15 graphs, so the normalizing function of the
edges + GWESP model, and the mean and covariance of its statistics, can be
computed exactly. These give the exact posterior score needed for CD and
KSD, which we compare with the Monte Carlo versions on a short DMH chain.
"""

import numpy as np

from ncdiag import ErgmModel, SamplerConfig, acd, aiks, cd, estimate_chain, ksd, run_sampler
from ncdiag.harness import min_ess, simulate_data
from ncdiag.oracle import enumerate_ergm, exact_posterior

theta = np.array([-0.5, 0.3])
table = enumerate_ergm(6, theta, 0.25)
print(f"log c(theta) = {table.log_c:.6f}")
print(f"E[S] = {np.round(table.mean, 4)}")
print(f"Cov[S] =\n{np.round(table.cov, 4)}")

data, _ = simulate_data({"model": "ergm", "n": 6, "theta": theta.tolist(), "sweeps": 200}, seed=3)
model = ErgmModel()
print(f"observed statistics: {model.statistic(data)}")

###############################################################################
# A DMH chain with ten inner sweeps per step
chain = run_sampler(
    model, data, SamplerConfig("dmh", 2000, inner_updates=10, proposal_scale=(0.4, 0.4), seed=0, init=tuple(theta))
)
print(f"acceptance {chain.meta['acceptance_rate']:.2f}, min ESS {min_ess(chain):.0f}")

post = exact_posterior(model, data)
u, H = post.along_chain(chain.points)
estimates = estimate_chain(chain, data, model, N=2000, seed=7)

print(f"CD   {cd(H, u):.4f}   ACD  {acd(chain, estimates):.4f}")
print(f"KSD  {ksd(chain, u).value:.4f}   AIKS {aiks(chain, estimates).value:.4f}")
