from cyclab.hooks import *
from cyclab.tasks import get_task_spec, generate_dataset, prompt_batch
from cyclab.test import all_close, tiny_model
from cyclab.utils import ContractError, HookError
import torch
import pytest


def _tokens(n: int=4) -> torch.Tensor:
    return prompt_batch(generate_dataset(get_task_spec('months'))[:n])


class TestHookPoints:
    def test_every_site_is_exposed(self):
        model = tiny_model()
        points = model.hook_points()
        for layer in range(model.config.n_layers):
            for name in HOOK_POINTS:
                assert (layer, name) in points
        assert normalize_hook_point('post_mlp') == RESID_POST_MLP

    def test_cache_shapes(self):
        model = tiny_model()
        tokens = _tokens()
        _, cache = forward_with_cache(model, tokens)
        assert cache[(1, RESID_POST_MLP)].shape == (4, tokens.shape[1], model.config.d_model)
        assert cache[(0, MLP_COMBINED_ACT)].shape == (4, tokens.shape[1], model.config.d_mlp)
        assert cache.get(0, RESID_PRE, -1).shape == (4, model.config.d_model)

    def test_cache_subset(self):
        model = tiny_model()
        _, cache = run_with_hooks(model, _tokens(), cache_points=[RESID_POST_ATTN])
        assert (0, RESID_POST_ATTN) in cache
        assert (0, 'post_attn') in cache and (1, 'post_attn') in cache
        assert all_close(cache[(0, 'post_attn')], cache[(0, RESID_POST_ATTN)])
        assert (0, 'post_mlp') not in cache and (0, 'nowhere') not in cache
        with pytest.raises(HookError):
            cache[(0, RESID_POST_MLP)]

    def test_hooks_are_removed(self):
        model = tiny_model()
        tokens = _tokens()
        clean = model(tokens)
        run_with_hooks(model, tokens, [HookSpec(0, RESID_POST_MLP, ZeroNeurons([0]))])
        assert all(len(point._forward_hooks) == 0 for point in model.hook_points().values())
        assert all_close(model(tokens), clean)


class TestInterventions:
    def test_replace_full_with_own_state_is_identity(self):
        model = tiny_model()
        tokens = _tokens()
        clean, cache = forward_with_cache(model, tokens)
        state = cache.get(1, RESID_POST_ATTN, -1)
        patched, _ = run_with_hooks(model, tokens, [HookSpec(1, RESID_POST_ATTN, ReplaceFull(state))])
        assert all_close(patched, clean, 1e-5)

    def test_intervention_reaches_downstream(self):
        model = tiny_model()
        tokens = _tokens()
        value = torch.randn(model.config.d_model)
        _, cache = run_with_hooks(model, tokens, [HookSpec(0, RESID_POST_MLP, ReplaceFull(value))])
        # the cache records the site after the intervention
        assert all_close(cache.get(0, RESID_POST_MLP, -1), value.expand(4, -1))
        assert all_close(cache.get(1, RESID_PRE, -1), value.expand(4, -1))
        # earlier positions are untouched
        _, clean = forward_with_cache(model, tokens)
        assert all_close(cache.get(1, RESID_POST_MLP, 0), clean.get(1, RESID_POST_MLP, 0))

    def test_replace_subspace(self):
        site = torch.tensor([[[1.0, 2.0]]])
        action = ReplaceSubspace(torch.tensor([5.0, 7.0]), torch.tensor([[1.0], [0.0]]))
        assert all_close(action.apply(site, [0]), torch.tensor([[[5.0, 2.0]]]))
        with pytest.raises(ContractError):
            ReplaceSubspace(torch.zeros(2), torch.tensor([[1.0], [0.1]]))

    def test_conflicting_replacements(self):
        model = tiny_model()
        value = torch.zeros(model.config.d_model)
        hooks = [HookSpec(0, RESID_POST_MLP, ReplaceFull(value)), HookSpec(0, RESID_POST_MLP, ReplaceFull(value))]
        with pytest.raises(HookError):
            run_with_hooks(model, _tokens(), hooks)

    def test_unknown_site(self):
        model = tiny_model()
        with pytest.raises(HookError):
            run_with_hooks(model, _tokens(), [HookSpec(9, RESID_POST_MLP, ZeroNeurons([0]))])

    def test_add_vector(self):
        site = torch.zeros(2, 3, 4)
        out = AddVector(torch.ones(4), scale=2.0).apply(site, [2])
        assert float(out[:, 2].sum()) == 16.0
        assert float(out[:, :2].abs().sum()) == 0.0


class TestNeuronActions:
    def setup_method(self):
        torch.manual_seed(0)
        self.site = torch.randn(3, 5, 8)

    def test_zero_and_keep_only_are_complementary(self):
        neurons = [1, 4, 6]
        zeroed = ZeroNeurons(neurons).apply(self.site, [4])
        kept = KeepOnlyNeurons(neurons).apply(self.site, [4])
        assert torch.equal(zeroed[:, 4] + kept[:, 4], self.site[:, 4])
        assert torch.equal(zeroed[:, :4], self.site[:, :4])
        assert torch.equal(kept[:, :4], self.site[:, :4])

    def test_double_flip_is_identity(self):
        flip = FlipNeurons([0, 3])
        assert torch.equal(flip.apply(flip.apply(self.site, [0, 4]), [0, 4]), self.site)

    def test_set_neurons(self):
        out = SetNeurons([2], 7.0).apply(self.site, [1])
        assert bool((out[:, 1, 2] == 7.0).all())
        assert float(out[:, 1, 2].sum()) == 21.0

    def test_index_out_of_range(self):
        with pytest.raises(HookError):
            ZeroNeurons([8]).apply(self.site, [0])

    def test_positions(self):
        assert resolve_positions([-1, 0], 5) == [4, 0]
        assert resolve_positions(None, 3) == [0, 1, 2]
        with pytest.raises(HookError):
            resolve_positions([5], 5)
