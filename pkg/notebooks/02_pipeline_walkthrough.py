# %% [markdown]
# # End-to-end pipeline on synthetic data
#
# Generate a labeled pool and an unlabeled pool, train the three models,
# add confident pseudo-labels, then vote.

# %%
from agtfusion.data import EmotionLabel, generate_synthetic, split
from agtfusion.metrics import f1_scores
from agtfusion.models import TrainConfig, create_model, predict
from agtfusion.semisup import MODEL_ROLES, self_train
from agtfusion.vote import VoteConfig, align_predictions, vote_all

counts = {lab: 60 for lab in EmotionLabel}
pool = generate_synthetic(counts, widths=(16, 16, 16), noise_sigma=0.35, conflict_rate=0.2, seed=1, prototype_seed=0)
test = generate_synthetic(counts, widths=(16, 16, 16), noise_sigma=0.35, conflict_rate=0.2, seed=2, prototype_seed=0,
                          id_prefix="test")
labeled, unlabeled = split(pool, (0.2, 0.8), seed=0)
print(len(labeled), "labeled,", len(unlabeled), "unlabeled,", len(test), "test")

# %% [markdown]
# Two stages: stage 1 trains on the labeled split only, stage 2 retrains
# with the samples all three models agree on with confidence above 0.8.

# %%
hp = {"d_model": 16, "n_heads": 2, "d_ff": 32, "n_layers": 1, "hidden": 32}
models = {role: create_model(role, labeled.widths, **hp) for role in MODEL_ROLES}
result = self_train(models, labeled, unlabeled.without_labels(), stages=2, threshold=0.8,
                    config=TrainConfig(epochs=30, lr=1e-2))
for rep in result.reports:
    print(f"stage {rep.stage}: train on {rep.n_train}, pseudo-labels {rep.n_pseudo}")

# %%
truth = {s.id: s.label for s in test}
preds = {role: {p.id: p.label for p in predict(m, test)} for role, m in result.models.items()}
for role, p in preds.items():
    print(f"{role:>8} weighted F1 {f1_scores(p, truth):.4f}")

# %% [markdown]
# Voting: majority unless a sensitive label appears, in which case the
# audio-only model is trusted with probability 0.8.

# %%
voted = vote_all(align_predictions(preds["audio"], preds["baseline"], preds["agt"]), VoteConfig(seed=0))
print(f"   voted weighted F1 {f1_scores(voted.labels, truth):.4f}")
print(voted.report.rows())
