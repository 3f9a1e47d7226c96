from cyclab.components import DecoderBlock, GatedMLP, RMSNorm
from cyclab.models import *
from cyclab.tasks import get_task_spec, generate_dataset, default_vocabulary
from cyclab.test import all_close, test_component as fit_component, tiny_config, tiny_model
from cyclab.utils import ArtifactError, ConfigError, DimensionError
from cyclab.numerics import MANIFEST_NAME
import os
import json
import torch
import pytest


class TestComponents:
    def test_rms_norm(self):
        norm = RMSNorm(8)
        x = torch.randn(3, 5, 8)
        y = norm(x)
        assert all_close(y.pow(2).mean(-1), torch.ones(3, 5), 1e-3)

    def test_gated_mlp_fits(self):
        mlp = GatedMLP(0, 16, 32)
        torch.nn.init.normal_(mlp.W_gate, 0.0, 0.1)
        torch.nn.init.normal_(mlp.W_up, 0.0, 0.1)
        torch.nn.init.normal_(mlp.W_down, 0.0, 0.1)
        fit_component(mlp, (4, 3, 16), n_iter=500, eps=1e-3)

    def test_decoder_block_is_causal(self):
        block = DecoderBlock(0, 16, 2, 32, 8)
        for parameter in block.parameters():
            if parameter.dim() >= 2: torch.nn.init.normal_(parameter, 0.0, 0.1)
        x = torch.randn(1, 6, 16)
        y = block(x)
        x_changed = x.clone()
        x_changed[0, 4] += 1.0
        y_changed = block(x_changed)
        assert all_close(y[0, :4], y_changed[0, :4])
        assert not all_close(y[0, 4:], y_changed[0, 4:])


class TestTransformerModel:
    def test_forward_shape(self):
        model = tiny_model()
        dataset = generate_dataset(get_task_spec('weekdays'))[:5]
        logits = final_logits(model, dataset)
        assert logits.shape == (5, len(default_vocabulary()))
        assert len(predict(model, dataset)) == 5

    def test_initialization_is_seeded(self):
        a, b = tiny_model(seed=3), tiny_model(seed=3)
        for (name, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
            assert torch.equal(p, q), name
        c = tiny_model(seed=4)
        assert not torch.equal(a.embed.weight, c.embed.weight)

    def test_mlp_weights(self):
        model = tiny_model()
        weights = model.mlp_weights(1)
        assert weights.gate.shape == weights.up.shape == weights.down.shape == (64, 32)

    def test_sequence_too_long(self):
        model = tiny_model(max_seq_len=4)
        with pytest.raises(DimensionError):
            model(torch.zeros(1, 5, dtype=torch.long))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ModelConfig.from_dict({'d_model': 30, 'n_heads': 4})
        with pytest.raises(ConfigError):
            ModelConfig.from_dict({'depth': 3})
        with pytest.raises(ConfigError):
            TrainSchedule.from_dict({'lr': 0.0})
        assert ModelConfig.from_dict(tiny_config().to_dict()) == tiny_config()

    def test_batches_group_by_length(self):
        weekdays = generate_dataset(get_task_spec('weekdays'))[:3]
        hours = generate_dataset(get_task_spec('hours'))[:2]
        mixed = [weekdays[0], hours[0], weekdays[1], hours[1], weekdays[2]]
        groups = group_by_length(mixed)
        assert sorted(sum(groups.values(), [])) == list(range(5))
        model = tiny_model()
        separate = torch.cat([final_logits(model, weekdays), final_logits(model, hours)])
        together = final_logits(model, mixed)
        assert all_close(together[[0, 2, 4, 1, 3]], separate, 1e-5)


class TestCheckpoint:
    def test_save_load(self, tmp_path):
        model = tiny_model(seed=7)
        directory = str(tmp_path / 'checkpoint')
        save_checkpoint(model, directory, step=12, accuracy={'months': 0.5}, verbose=False)
        loaded, manifest = load_checkpoint(directory)
        assert manifest['step'] == 12 and manifest['accuracy'] == {'months': 0.5}
        assert loaded.config == model.config
        tokens = torch.tensor([[1, 5, 7, 9]])
        assert torch.equal(loaded(tokens), model(tokens))

    def test_config_mismatch(self, tmp_path):
        directory = str(tmp_path / 'checkpoint')
        save_checkpoint(tiny_model(), directory, verbose=False)
        path = os.path.join(directory, MANIFEST_NAME)
        with open(path) as f:
            manifest = json.load(f)
        manifest['config']['d_mlp'] = 32
        with open(path, 'w') as f:
            json.dump(manifest, f)
        with pytest.raises(ArtifactError):
            load_checkpoint(directory)
