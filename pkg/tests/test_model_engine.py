import copy

import pytest
import torch

from conftest import tiny_config
from dcgaze.config import ConfigError
from dcgaze.data import to_image_tensor
from dcgaze.engine import (
    CheckpointError,
    TrainAbortError,
    Trainer,
    default_backend,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    total_loss,
)
from dcgaze.model import DCGazeModel


def make_trainer(dataset, **overrides):
    cfg = tiny_config(**overrides)
    model = DCGazeModel(cfg, default_backend(cfg))
    return Trainer(model, cfg), model, cfg


def test_total_loss_direct_substitution():
    assert total_loss(1.0, 2.0, 3.0, 0.1, 0.1) == pytest.approx(1.5)
    assert total_loss(0.7, 2.0, 3.0, 0.0, 0.0) == pytest.approx(0.7)
    assert total_loss(0.0, 0.0, 0.0, 0.1, 0.1) == 0.0
    with pytest.raises(ValueError):
        total_loss(-0.1, 0.0, 0.0, 0.1, 0.1)


def test_total_loss_monotone_in_components():
    base = total_loss(1.0, 1.0, 1.0, 0.2, 0.3)
    assert total_loss(1.5, 1.0, 1.0, 0.2, 0.3) >= base
    assert total_loss(1.0, 1.5, 1.0, 0.2, 0.3) >= base
    assert total_loss(1.0, 1.0, 1.5, 0.2, 0.3) >= base


def test_train_step_reports_components(tiny_dataset):
    trainer, _, _ = make_trainer(tiny_dataset)
    metrics = trainer.train_step(tiny_dataset[:4])
    assert set(metrics) == {"l_gaze", "l_mask", "l_align", "total"}
    assert metrics["total"] == pytest.approx(
        metrics["l_gaze"] + 0.1 * metrics["l_mask"] + 0.1 * metrics["l_align"],
        rel=1e-5)


def test_dctrain_off_skips_pair_computation(tiny_dataset, monkeypatch):
    trainer, model, _ = make_trainer(tiny_dataset, use_dctrain=False)
    assert not hasattr(model, "pair_embedder")
    import dcgaze.engine as engine_mod

    def boom(*a, **k):
        raise AssertionError("pair computation ran with use_dctrain off")

    monkeypatch.setattr(engine_mod, "build_pairs", boom)
    metrics = trainer.train_step(tiny_dataset[:4])
    assert metrics["l_align"] == 0.0


def test_dgr_off_masked_loss_zero(tiny_dataset):
    trainer, _, _ = make_trainer(tiny_dataset, use_dgr=False)
    assert trainer.train_step(tiny_dataset[:4])["l_mask"] == 0.0


def test_identical_seeds_identical_deltas(tiny_dataset):
    results = []
    for _ in range(2):
        trainer, model, _ = make_trainer(tiny_dataset, seed=123)
        trainer.train_step(tiny_dataset[:4])
        results.append({k: v.detach().clone() for k, v in model.state_dict().items()})
    for key in results[0]:
        assert torch.equal(results[0][key], results[1][key]), key


def test_nan_loss_aborts_with_components(tiny_dataset):
    trainer, model, _ = make_trainer(tiny_dataset)
    with torch.no_grad():
        model.mlp_head.net[2].weight.fill_(float("nan"))
    with pytest.raises(TrainAbortError) as exc:
        trainer.train_step(tiny_dataset[:4])
    assert "l_gaze" in exc.value.components


def test_text_encoder_frozen_after_steps(tiny_dataset):
    trainer, model, _ = make_trainer(tiny_dataset, finetune_image_encoder=True)
    before = [p.detach().clone() for p in model.backend.text_parameters()]
    img_before = [p.detach().clone() for p in model.backend.image_parameters()]
    for _ in range(5):
        trainer.train_step(tiny_dataset[:4])
    for p0, p1 in zip(before, model.backend.text_parameters()):
        assert torch.equal(p0, p1)
    # the image encoder, by contrast, does move when fine-tuning is on
    assert any(not torch.equal(p0, p1)
               for p0, p1 in zip(img_before, model.backend.image_parameters()))


def test_dgr_off_leaves_update_semantics(tiny_dataset):
    # with the masked head off, a step driven only by l_gaze+l_align must not
    # depend on the mask stream at all
    t1, m1, _ = make_trainer(tiny_dataset, use_dgr=False, seed=7, mask_seed=1)
    t2, m2, _ = make_trainer(tiny_dataset, use_dgr=False, seed=7, mask_seed=2)
    t1.train_step(tiny_dataset[:4])
    t2.train_step(tiny_dataset[:4])
    for (k1, v1), (k2, v2) in zip(m1.state_dict().items(), m2.state_dict().items()):
        assert torch.equal(v1, v2), k1


def test_infer_deterministic_and_prunes(tiny_dataset):
    trainer, model, cfg = make_trainer(tiny_dataset)
    trainer.train_step(tiny_dataset[:4])
    images = torch.stack([to_image_tensor(s.image) for s in tiny_dataset[:3]])
    raw = [s.image for s in tiny_dataset[:3]]
    outs = [model.infer(images, raw) for _ in range(10)]
    for out in outs[1:]:
        assert torch.equal(out, outs[0])

    # same weights loaded into a model built without semantic branch / masked head
    pruned_cfg = tiny_config(use_dctrain=False, use_dgr=False)
    pruned = DCGazeModel(pruned_cfg, default_backend(cfg))
    state = {k: v for k, v in model.state_dict().items()
             if k in dict(pruned.state_dict())}
    pruned.load_state_dict(state, strict=True)
    assert torch.equal(pruned.infer(images, raw), outs[0])


def test_infer_requires_backend_for_afu():
    with pytest.raises(ConfigError):
        DCGazeModel(tiny_config(use_afu=True), backend=None)


def test_checkpoint_roundtrip_bit_exact(tiny_dataset, tmp_path):
    trainer, model, cfg = make_trainer(tiny_dataset)
    trainer.train_step(tiny_dataset[:4])
    path = tmp_path / "epoch_0001.ckpt"
    save_checkpoint(model, cfg, 1, {"total": 1.0}, path)
    assert path.with_suffix(".meta.json").is_file()
    loaded, loaded_cfg, epoch = load_checkpoint(path)
    assert epoch == 1
    images = torch.stack([to_image_tensor(s.image) for s in tiny_dataset[:2]])
    raw = [s.image for s in tiny_dataset[:2]]
    assert torch.equal(loaded.infer(images, raw), model.infer(images, raw))


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")
    bad = tmp_path / "bad.ckpt"
    torch.save({"version": 999, "config": {}, "state_dict": {}, "epoch": 0}, bad)
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)


def test_evaluate_arithmetic(tiny_dataset):
    _, model, _ = make_trainer(tiny_dataset)
    result = evaluate(tiny_dataset, model)
    assert len(result["per_sample_deg"]) == len(tiny_dataset)
    assert result["mean_deg"] == pytest.approx(
        sum(result["per_sample_deg"]) / len(tiny_dataset))
    with pytest.raises(ValueError):
        evaluate([], model)


def test_fit_writes_metrics_csv(tiny_dataset, tmp_path):
    trainer, _, cfg = make_trainer(tiny_dataset, epochs=2)
    history = trainer.fit(tiny_dataset, tmp_path)
    assert len(history) == 2
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == "epoch,l_gaze,l_mask,l_align,total,val_deg"
    assert len(lines) == 3
    assert (tmp_path / "epoch_0002.ckpt").is_file()


def test_fusion_variants_forward(tiny_dataset):
    for fusion in ("concat", "cross_attention", "none"):
        trainer, _, _ = make_trainer(tiny_dataset, fusion=fusion)
        metrics = trainer.train_step(tiny_dataset[:4])
        assert metrics["total"] > 0
    # gated fusion needs backend embed_dim == feature_dim
    trainer, _, _ = make_trainer(tiny_dataset, fusion="gated", backend_embed_dim=8)
    assert trainer.train_step(tiny_dataset[:4])["total"] > 0
    with pytest.raises(ConfigError):
        make_trainer(tiny_dataset, fusion="gated", backend_embed_dim=16)


def test_prompt_cache_matches_direct_encoding(tiny_dataset):
    _, model, _ = make_trainer(tiny_dataset)
    cached = model.prompt_embeddings()
    for idx, prompt in enumerate(model.grade_scheme.prompts()):
        direct = model.backend.encode_text(prompt)
        direct = direct / direct.norm()
        assert torch.allclose(cached[idx], direct, atol=1e-6)
    assert model.prompt_embeddings() is cached  # built once, reused
