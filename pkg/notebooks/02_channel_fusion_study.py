# %% [markdown]
# # Fusing channels: attention, concatenation and single channels
#
# The acceptance study trains every variant with 5-fold cross-validation on
# ten synthetic programs and compares macro ACC. This notebook reruns one
# seed and then looks at why attention does not come out on top here.

# %%
import numpy as np

from progreid.dataset import reid_dataset
from progreid.encoder import EncoderConfig
from progreid.evaluation import format_table, reid_study, score_examples
from progreid.features import FeatureConfig
from progreid.model import ModelConfig, TrainConfig, train
from progreid.synth import gen_corpus, make_profiles

SEED = 0
corpus = gen_corpus(make_profiles(10, seed=SEED), 40, SEED)
tcfg = TrainConfig(lr=0.01, epochs=200, patience=20, seed=SEED)

# %% [markdown]
# ## One seed of the study

# %%
cfg = ModelConfig(features=FeatureConfig(d_con=64), encoder=EncoderConfig(3, 8))
rows = reid_study(corpus, ["pp", "pf", "pi", "con", "att"], cfg, tcfg, k=5, seed=SEED)
print(format_table(rows))

# %% [markdown]
# Every variant sits at the ceiling, and single channels match the fused
# models. Feature rows are computed on the whole behavior graph, so the
# target's row in every channel carries its full neighborhood, sockets and
# files alike. Each channel sees nearly everything the others see.
#
# ## Where the attention weights go
#
# With the LeakyReLU gate the channel scores are unbounded. The softmax
# can starve a channel completely, and which one loses is settled by
# training dynamics, not by how informative it is.

# %%
for gate in ("leaky_relu", "sigmoid"):
    gcfg = ModelConfig(features=FeatureConfig(d_con=64), encoder=EncoderConfig(3, 8), gate=gate)
    weights = []
    for program in corpus.programs()[:5]:
        data = reid_dataset(corpus, program, gcfg, SEED)
        model = train(data, gcfg, tcfg)
        weights.append(score_examples(model, data)[2].mean(axis=0))
    weights = np.array(weights)
    print(gate, "mean weights per program (PP, PF, PI):")
    print(np.round(weights, 3))
    print("  smallest weight seen:", f"{weights.min():.1e}")

# %% [markdown]
# The sigmoid gate keeps every score in (0, 1), so within one example no
# channel weight can exceed another by more than a factor of e. It removes
# the collapse but not the gap to concatenation. Concatenation keeps each
# channel's embedding in its own coordinates. Attention averages them into
# one shared space before the classifier sees them.
