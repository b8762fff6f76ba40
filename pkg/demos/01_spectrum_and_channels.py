"""Local spectra see the channels.

Each coarse element carries a generalized eigenproblem a_Q^(j) phi = lambda s^(j) phi.
High-conductivity channels that cross an element produce one small eigenvalue
each, followed by a jump. Counting channel components per element and
printing the first eigenvalues makes this visible.

    python demos/01_spectrum_and_channels.py
"""

import numpy as np

from dualcem.grid import build_hierarchy, partition_of_unity
from dualcem.media import channel_components, experiment1_spec, generate_channelized
from dualcem.spectral import build_auxiliary_space

hier = build_hierarchy(n_coarse=8, refinement_factor=16)
media = generate_channelized(hier, experiment1_spec(), contrast=1e4)
pou = partition_of_unity(hier)
aux = build_auxiliary_space(hier, media, pou, L=6)

np.set_printoptions(precision=3, linewidth=120)
print("element  components (c1, c2)  first seven eigenvalues")
for j in range(hier.n_elements):
    n1, n2 = channel_components(media, hier, j)
    if n1 + n2 >= 4:
        print(f"{j:7d}  {(n1, n2)!s:>19}  {aux.eigenvalues(j)}")

# the element crossed by both three-channel bundles
j = max(range(hier.n_elements), key=lambda j: sum(channel_components(media, hier, j)))
lam = aux.eigenvalues(j)
print(f"\nK_{j}: lambda_7 / lambda_6 = {lam[6] / lam[5]:.1f}")
print(f"Lambda = min_j lambda_(L+1) = {aux.Lambda:.4g}")
