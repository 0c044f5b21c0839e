# coding: utf-8

# # Graphs and ground-truth SCMs
#
# The synthetic systems ship with their causal graph, an exact abduction map
# and surgery-based oracles for interventions and counterfactuals.  This
# script walks through those pieces without any learning.

# In[1]:

import numpy as np

from causalflow import scm as scm_lib
from causalflow.graph import PartialGraphSpec, condense_partial, diameter, transitive_closure

print(scm_lib.list_scms())


# A graph keeps its adjacency (rows are effects) and a causal ordering.

# In[2]:

tri = scm_lib.get_scm("triangle-nlin")
g = tri.graph
print(g.adjacency)
print("ordering", g.ordering, "diameter", diameter(g))
print("closure\n", transitive_closure(g).astype(int))


# Sampling solves the mechanisms in causal order; abduction inverts them.

# In[3]:

ds = scm_lib.sample(tri, 5, seed=0)
print(np.round(ds.x, 3))
print(np.allclose(scm_lib.abduct_true(tri, ds.x), ds.u))


# The three-node toy chain has x2 = 2 x1 + u2 and x3 = 3 x2 + u3.  Observing
# (1, 3, 10) pins u = (1, 1, 1); forcing x2 to 0 then gives x3 = u3 = 1.

# In[4]:

toy = scm_lib.get_scm("chain3-toy")
print(scm_lib.counterfactual_true(toy, np.array([[1.0, 3.0, 10.0]]), 1, 0.0))


# Interventional samples from a linear system agree with the closed-form moments.

# In[5]:

chain = scm_lib.get_scm("chain3-lin")
xs = scm_lib.intervene_true(chain, 1, 2.0, 50_000, seed=1)
mean, cov = scm_lib.linear_moments(chain, {1: 2.0})
print(np.round(xs.mean(axis=0), 3), np.round(mean, 3))
print(np.round(np.cov(xs.T), 2))
print(np.round(cov, 2))


# When only part of the graph is known, nodes whose mutual relations are
# unknown collapse into blocks and the blocks form a DAG.

# In[6]:

spec = PartialGraphSpec(4, {(0, 1), (0, 2), (1, 3)}, {(1, 2)})
blocks = condense_partial(spec)
print(blocks.blocks)
print(blocks.block_adjacency)
