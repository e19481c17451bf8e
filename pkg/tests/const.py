"""Constants for catsd tests."""

SEED = 7

# Gaussian noise standard deviations at severities 1..5
NOISE_SIGMAS = (0.04, 0.06, 0.08, 0.09, 0.10)

# A suite small enough to generate in a few seconds
SMALL_SUITE = {
    "image_size": 32,
    "n_background_variations": 4,
    "n_foreground_variations": 4,
    "train_target": 4,
    "exemplar_target": 2,
    "val_target": 2,
    "test_target": 3,
}

# Short schedule used wherever a test trains a model end to end
FAST_EXPERIMENT = {
    "epochs_t0": 1,
    "epochs_t1": 1,
    "batch_size": 4,
    "lr_t0": 0.05,
    "lr_t1": 0.02,
}

MOCK_RUN_CONFIG = {
    "seed": SEED,
    "synth": SMALL_SUITE,
    "experiment": FAST_EXPERIMENT,
    "robustness": {"families": ["noise"], "severities": [1, 3, 5]},
    "threads": 2,
}
