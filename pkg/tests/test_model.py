"""Generator/discriminator architecture: assembly locality, persistence."""

import numpy as np
import pytest
import torch

from puzzlegan.errors import NumericalError, ValidationError
from puzzlegan.latent import default_prior_spec, mix, sample_bundle
from puzzlegan.layout import part_cells
from puzzlegan.model import (
    ModelSpec,
    build_discriminator,
    build_generator,
    compose_head,
    discriminate,
    generate,
    generate_batch,
    load_checkpoint,
    save_checkpoint,
)


def _gen(layout, seed=0, channels=8, scale=1, out=32):
    spec = ModelSpec(layout=layout, head_channels=channels, out_resolution=out)
    prior = default_prior_spec(layout, scale=scale)
    return build_generator(spec, prior, seed=seed)


def test_model_spec_validation(facial_parts):
    with pytest.raises(ValidationError, match="odd"):
        ModelSpec(layout=facial_parts, kernel_size=4)
    with pytest.raises(ValidationError, match="power of 2"):
        ModelSpec(layout=facial_parts, out_resolution=24)
    with pytest.raises(ValidationError, match="head_channels"):
        ModelSpec(layout=facial_parts, head_channels=0)


def test_layer_plan_shape(facial_parts):
    spec = ModelSpec(layout=facial_parts, out_resolution=32)
    assert spec.up_blocks == 2
    assert spec.layer_plan() == (
        ("conv", 3),
        ("upsample", 2), ("conv", 3), ("conv", 3),
        ("upsample", 2), ("conv", 3), ("conv", 3),
        ("conv", 1),
    )
    flat = ModelSpec(layout=facial_parts, out_resolution=8)
    assert flat.layer_plan() == (("conv", 3), ("conv", 1))


def test_channel_halving_with_floor(facial_parts):
    spec = ModelSpec(layout=facial_parts, head_channels=32, min_channels=8, out_resolution=64)
    assert [spec.channels_at(i) for i in range(4)] == [32, 16, 8, 8]


def test_spec_dict_round_trip_rejects_unknown_keys(facial_parts):
    spec = ModelSpec(layout=facial_parts, head_channels=16)
    again = ModelSpec.from_dict(spec.to_dict())
    assert again == spec
    with pytest.raises(ValidationError, match="unknown"):
        ModelSpec.from_dict({**spec.to_dict(), "bogus": 1})
    with pytest.raises(ValidationError, match="layout"):
        ModelSpec.from_dict({"head_channels": 16})


def test_compose_head_scatters_each_part_to_its_cells(facial_parts):
    gen = _gen(facial_parts, seed=3, channels=4)
    bundle = sample_bundle(gen.prior, facial_parts, seed=1)
    block = compose_head(gen, bundle).numpy()  # (c, 8, 8)
    assert block.shape == (4, 8, 8)
    # reconstruct each part head output independently and compare cellwise
    for part in range(1, 6):
        head = gen.heads[part - 1]
        z = torch.from_numpy(np.array(bundle.vectors[part - 1]))
        out = head(z.unsqueeze(0)).detach().numpy().reshape(len(part_cells(facial_parts, part)), 4)
        for row, (r, c) in zip(out, part_cells(facial_parts, part)):
            assert np.array_equal(block[:, r, c], row)


def test_single_part_mix_changes_only_that_parts_cells(facial_parts):
    gen = _gen(facial_parts, seed=5, channels=8)
    a = sample_bundle(gen.prior, facial_parts, seed=10)
    b = sample_bundle(gen.prior, facial_parts, seed=11)
    base = compose_head(gen, a).numpy()
    for part in range(1, 6):
        mixed = compose_head(gen, mix(a, b, [part])).numpy()
        changed = np.any(mixed != base, axis=0)
        allowed = np.zeros((8, 8), dtype=bool)
        for r, c in part_cells(facial_parts, part):
            allowed[r, c] = True
        assert not np.any(changed & ~allowed)  # zero tolerance outside the part
        assert np.any(changed)


def test_generator_output_shape_range_and_determinism(tiny_spec):
    prior = default_prior_spec(tiny_spec.layout, scale=2)
    gen = build_generator(tiny_spec, prior, seed=0)
    bundle = sample_bundle(prior, tiny_spec.layout, seed=0)
    img = generate(gen, bundle)
    assert img.shape == (32, 32, 3)
    assert img.dtype == np.float32
    assert float(img.min()) >= -1.0 and float(img.max()) <= 1.0
    assert np.array_equal(img, generate(gen, bundle))


def test_generate_batch_matches_single(tiny_spec):
    prior = default_prior_spec(tiny_spec.layout, scale=1)
    gen = build_generator(tiny_spec, prior, seed=2)
    bundles = [sample_bundle(prior, tiny_spec.layout, seed=i) for i in range(3)]
    batch = generate_batch(gen, bundles)
    assert batch.shape == (3, 32, 32, 3)
    for i, b in enumerate(bundles):
        # batched conv reduces in a different order than single-sample conv
        assert np.allclose(batch[i], generate(gen, b), atol=1e-5)


def test_generator_rejects_mismatched_bundle(tiny_spec, face_swap):
    prior = default_prior_spec(tiny_spec.layout, scale=1)
    gen = build_generator(tiny_spec, prior, seed=0)
    other = sample_bundle(default_prior_spec(face_swap, scale=1), face_swap, seed=0)
    with pytest.raises(ValidationError, match="layout"):
        generate(gen, other)
    wrong_dims = sample_bundle(default_prior_spec(tiny_spec.layout, scale=2), tiny_spec.layout, seed=0)
    with pytest.raises(ValidationError, match="dims"):
        generate(gen, wrong_dims)


def test_non_finite_weights_raise_numerical_error(tiny_spec):
    prior = default_prior_spec(tiny_spec.layout, scale=1)
    gen = build_generator(tiny_spec, prior, seed=0)
    with torch.no_grad():
        gen.to_rgb.weight.fill_(float("nan"))
    bundle = sample_bundle(prior, tiny_spec.layout, seed=0)
    with pytest.raises(NumericalError, match="non-finite"):
        generate(gen, bundle)


def test_discriminator_mirrors_generator_resolutions(tiny_spec):
    prior = default_prior_spec(tiny_spec.layout, scale=1)
    gen = build_generator(tiny_spec, prior, seed=0)
    disc = build_discriminator(tiny_spec, seed=1)
    assert disc.conv_resolutions() == list(reversed(gen.conv_resolutions()))


def test_discriminator_scores_and_input_check(tiny_spec):
    disc = build_discriminator(tiny_spec, seed=4)
    x = torch.zeros((5, 3, 32, 32))
    scores = disc(x)
    assert scores.shape == (5,)
    with pytest.raises(ValidationError, match="discriminator expects"):
        disc(torch.zeros((5, 3, 16, 16)))
    val = discriminate(disc, np.zeros((32, 32, 3), dtype=np.float32))
    assert isinstance(val, float)


def test_discriminator_features_shape(tiny_spec):
    disc = build_discriminator(tiny_spec, seed=4)
    feats = disc.features(torch.zeros((2, 3, 32, 32)))
    assert feats.shape == (2, tiny_spec.head_channels)


def test_initialize_parameters_is_seed_deterministic(tiny_spec):
    prior = default_prior_spec(tiny_spec.layout, scale=1)
    a = build_generator(tiny_spec, prior, seed=7)
    b = build_generator(tiny_spec, prior, seed=7)
    c = build_generator(tiny_spec, prior, seed=8)
    for (n1, p1), (_, p2), (_, p3) in zip(
        a.named_parameters(), b.named_parameters(), c.named_parameters()
    ):
        assert torch.equal(p1, p2), n1
        if p1.ndim >= 2:
            assert not torch.equal(p1, p3), n1


def test_biases_start_at_zero(tiny_spec):
    prior = default_prior_spec(tiny_spec.layout, scale=1)
    gen = build_generator(tiny_spec, prior, seed=0)
    for name, p in gen.named_parameters():
        if name.endswith("bias"):
            assert torch.equal(p, torch.zeros_like(p)), name


def test_checkpoint_round_trip_bit_exact(tmp_path, tiny_spec):
    prior = default_prior_spec(tiny_spec.layout, scale=1)
    gen = build_generator(tiny_spec, prior, seed=0)
    disc = build_discriminator(tiny_spec, seed=1)
    path = save_checkpoint(tmp_path / "m.ckpt", gen, disc, step=42, extra={"note": "x"})
    ck = load_checkpoint(path)
    assert ck.step == 42
    assert ck.extra == {"note": "x"}
    assert ck.spec == tiny_spec
    assert ck.prior == prior
    for (name, p), (_, q) in zip(gen.named_parameters(), ck.generator.named_parameters()):
        assert torch.equal(p, q), name
    bundle = sample_bundle(prior, tiny_spec.layout, seed=3)
    assert np.array_equal(generate(gen, bundle), generate(ck.generator, bundle))
    # same content twice -> identical bytes
    p2 = save_checkpoint(tmp_path / "m2.ckpt", gen, disc, step=42, extra={"note": "x"})
    assert path.read_bytes() == p2.read_bytes()


def test_checkpoint_rejects_shape_mismatch_and_strays(tmp_path, tiny_spec):
    from puzzlegan import containers

    prior = default_prior_spec(tiny_spec.layout, scale=1)
    gen = build_generator(tiny_spec, prior, seed=0)
    disc = build_discriminator(tiny_spec, seed=1)
    path = save_checkpoint(tmp_path / "m.ckpt", gen, disc, step=0)
    meta, arrays = containers.read_container(path)

    broken = dict(arrays)
    broken["g.to_rgb.bias"] = np.zeros(7, dtype=np.float32)
    containers.write_container(tmp_path / "b.ckpt", "checkpoint", meta, broken)
    with pytest.raises(ValidationError, match="shape"):
        load_checkpoint(tmp_path / "b.ckpt")

    del broken["g.to_rgb.bias"]
    containers.write_container(tmp_path / "c.ckpt", "checkpoint", meta, broken)
    with pytest.raises(ValidationError, match="missing tensor"):
        load_checkpoint(tmp_path / "c.ckpt")

    stray = dict(arrays)
    stray["g.mystery"] = np.zeros(1, dtype=np.float32)
    containers.write_container(tmp_path / "d.ckpt", "checkpoint", meta, stray)
    with pytest.raises(ValidationError, match="unexpected"):
        load_checkpoint(tmp_path / "d.ckpt")

    with pytest.raises(ValidationError, match="does not exist"):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_face_swap_architecture_works_end_to_end(face_swap):
    gen = _gen(face_swap, seed=0, channels=8, scale=1, out=16)
    bundle = sample_bundle(gen.prior, face_swap, seed=0)
    assert generate(gen, bundle).shape == (16, 16, 3)
