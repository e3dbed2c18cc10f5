import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import numpy as np
import pytest
import torch

from liverseg.attention import AttentionConfig, AttentionVariant
from liverseg.models import Architecture, Backbone, ModelConfig, build_model
from liverseg.phantom import PhantomSpec, generate_case, generate_phantom
from liverseg.training import TrainConfig, train
from liverseg.data import SliceSample, Split, normalize_slice


@pytest.fixture(scope="session")
def phantom_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("phantoms")
    spec = PhantomSpec(n_cases=4, slices_per_case=8, image_size=64, seed=7)
    generate_phantom(spec, str(out))
    return str(out)


def make_phantom_samples(n=8, size=64, seed=3, split=Split.TRAIN):
    rng = np.random.default_rng(seed)
    spec = PhantomSpec(n_cases=1, slices_per_case=n, image_size=size, seed=seed)
    ct, mask = generate_case(spec, rng)
    return [
        SliceSample(case_id="fixture", slice_index=z,
                    image=normalize_slice(ct[:, :, z]).astype(np.float32),
                    mask=mask[:, :, z], split=split)
        for z in range(n)
    ]


@pytest.fixture(scope="session")
def overfit_run():
    """Tiny UNet3+/CBAM trained to overfit an 8-slice phantom set.

    Shared by the training and Grad-CAM acceptance checks.
    """
    torch.manual_seed(0)
    samples = make_phantom_samples(n=8, size=64, seed=11)
    config = ModelConfig(
        architecture=Architecture.UNET3P, backbone=Backbone.RESNET_TINY,
        decoder_channels=16, input_size=64,
        attention=AttentionConfig(variant=AttentionVariant.CBAM))
    model = build_model(config)
    train_config = TrainConfig(lr0=0.01, batch_size=4, epochs=1000,
                               max_iterations=200, val_interval=50, seed=0)
    result = train(model, samples, samples, train_config)
    model.load_state_dict(result.best_state)
    model.eval()
    return model, samples, result
