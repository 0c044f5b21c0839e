# coding: utf-8

# # Counterfactual fairness on German Credit
#
# Needs the raw german.data file under data/german/ (or $CAUSALFLOW_DATA_DIR).
# One fold and 100 epochs; the full audit runs five folds of 1000.

# In[1]:

import sys
from dataclasses import replace

import numpy as np

from causalflow.data import load_german, requantize
from causalflow.errors import ChecksumError
from causalflow.experiments import GERMAN_DESIGN, GERMAN_TRAIN, german_model_factory
from causalflow.fairness import AuditConfig, audit, feature_columns, format_report
from causalflow.graph import condense_partial

try:
    data, spec = load_german(seed=0)
except ChecksumError as exc:
    sys.exit(str(exc))


# Every feature is an integer code plus U(0, 1) noise; flooring gives the code back.

# In[2]:

print(data.names)
print(np.array_equal(requantize(data.x), data.codes))


# Unknown pairs merge into blocks; the flow conditions on whole blocks.

# In[3]:

blocks = condense_partial(spec)
print([[data.names[i] for i in b] for b in blocks.blocks])
print(feature_columns(blocks, 0, len(data.names)))


# In[4]:

factory = german_model_factory(blocks, GERMAN_DESIGN, replace(GERMAN_TRAIN, epochs=100))
report = audit(factory, data, blocks, AuditConfig(folds=1))
print(format_report(report))
