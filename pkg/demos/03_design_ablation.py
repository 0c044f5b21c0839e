# coding: utf-8

# # Design choices and shortcuts
#
# Generative flows with graph masks need as many layers as the graph's
# diameter before indirect effects can propagate.  Ordering masks can learn
# shortcuts; the Jacobian penalty pushes them back towards the graph.

# In[1]:

import warnings

import numpy as np

from causalflow import scm as scm_lib
from causalflow.data import generate_dataset
from causalflow.errors import DiameterWarning
from causalflow.causal import consistency_score
from causalflow.flows import DesignChoice, build_flow
from causalflow.metrics import kl_obs
from causalflow.train import TrainConfig, fit

chain = scm_lib.get_scm("chain4-lin")
splits = generate_dataset(chain, (2000, 500, 500), seed=0)
cfg = TrainConfig(epochs=40, seed=0)


def run(design, regularize=False):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DiameterWarning)
        model = build_flow(design, chain.graph, seed=0)
    model, _ = fit(model, splits["train"].x, splits["val"].x,
                   TrainConfig(epochs=cfg.epochs, seed=0, regularizer_on=regularize), graph=chain.graph)
    kl, _ = kl_obs(chain, model, n=1000, seed=1)
    return kl, consistency_score(model, splits["test"].x, chain.graph)


# KL of the generative/graph design as layers are added (the chain has diameter 3).

# In[2]:

for layers in (1, 2, 3):
    kl, _ = run(DesignChoice(direction="generative", num_layers=layers, hidden=(16, 16)))
    print(layers, round(kl, 4))


# Ordering masks with and without the penalty.

# In[3]:

for reg in (False, True):
    kl, score = run(DesignChoice(mask_source="ordering", hidden=(16, 16)), regularize=reg)
    print("regularized" if reg else "plain", round(kl, 4), np.format_float_scientific(score, 2))
