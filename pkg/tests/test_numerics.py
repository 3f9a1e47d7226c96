from cyclab.numerics import *
from cyclab.test import all_close
from cyclab.utils import ArtifactError, DimensionError, EmptyBasisError
import torch
import pytest


class TestLinalg:
    def test_qr_orthonormalize(self):
        torch.manual_seed(0)
        m = torch.randn(20, 6, dtype=torch.float64)
        basis = qr_orthonormalize(m)
        assert basis.shape == (20, 6)
        assert gram_deviation(basis) < 1e-6
        # same column space
        assert all_close(project_onto(m.t(), basis).t(), m, 1e-8)

    def test_qr_drops_dependent_columns(self):
        torch.manual_seed(0)
        a = torch.randn(10, 3, dtype=torch.float64)
        m = torch.cat([a, a[:, :1] + a[:, 1:2]], dim=1)
        assert qr_orthonormalize(m).shape == (10, 3)

    def test_qr_zero_matrix(self):
        with pytest.raises(EmptyBasisError):
            qr_orthonormalize(torch.zeros(5, 2))

    def test_svd_reconstruction(self):
        torch.manual_seed(1)
        m = torch.randn(12, 7, dtype=torch.float64)
        u, s, v = svd(m)
        reconstruction = u @ torch.diag(s) @ v.t()
        assert float((reconstruction - m).norm() / m.norm()) < 1e-5
        assert bool((s[:-1] >= s[1:]).all())
        assert matrix_rank(m[:, :3] @ torch.randn(3, 7, dtype=torch.float64)) == 3

    def test_least_squares(self):
        torch.manual_seed(2)
        x = torch.randn(50, 4, dtype=torch.float64)
        w = torch.tensor([1.0, -2.0, 0.5, 3.0], dtype=torch.float64)
        assert all_close(least_squares(x, x @ w), w, 1e-8)

    def test_pca(self):
        torch.manual_seed(3)
        direction = torch.tensor([3.0, 4.0, 0.0]) / 5
        x = torch.randn(200, 1) * 10 * direction + 0.01 * torch.randn(200, 3)
        components, explained = pca(x, 2)
        assert components.shape == (3, 2)
        assert abs(abs(float(components[:, 0] @ direction.double())) - 1.0) < 1e-3
        assert explained[0] > explained[1]
        with pytest.raises(DimensionError):
            pca(x, 4)

    def test_matmul_shape_check(self):
        with pytest.raises(DimensionError):
            matmul(torch.ones(2, 3), torch.ones(2, 3))

    def test_subspace_interchange(self):
        e1 = torch.tensor([[1.0], [0.0]])
        patched = subspace_interchange(torch.tensor([1.0, 2.0]), torch.tensor([5.0, 7.0]), e1)
        assert all_close(patched, torch.tensor([5.0, 2.0]))

        torch.manual_seed(4)
        basis = qr_orthonormalize(torch.randn(8, 3, dtype=torch.float64))
        h_o, h_c = torch.randn(8, dtype=torch.float64), torch.randn(8, dtype=torch.float64)
        once = subspace_interchange(h_o, h_c, basis)
        assert all_close(subspace_interchange(once, h_c, basis), once, 1e-10)
        full = qr_orthonormalize(torch.randn(8, 8, dtype=torch.float64))
        assert all_close(subspace_interchange(h_o, h_c, full), h_c)


class TestAutograd:
    def test_finite_difference_check(self):
        torch.manual_seed(0)
        params = {'w': torch.randn(4, 3), 'x': torch.randn(3)}

        def fn(p):
            return torch.tanh(p['w'] @ p['x']).pow(2).sum() + torch.logsumexp(p['w'].sum(0), 0)

        assert finite_difference_check(fn, params, step=1e-5) < 1e-4

    @pytest.mark.parametrize("primitive", [
        lambda w: (w @ w.t()).trace(),
        lambda w: torch.sigmoid(w).sum(),
        lambda w: torch.nn.functional.silu(w).prod(),
        lambda w: torch.softmax(w.flatten(), 0)[0],
        lambda w: torch.linalg.vector_norm(w),
    ])
    def test_primitives(self, primitive):
        torch.manual_seed(1)
        assert finite_difference_check(lambda p: primitive(p['w']), {'w': torch.randn(3, 2)}, step=1e-5) < 1e-4

    def test_unused_parameter_gets_zero_gradient(self):
        w, v = torch.randn(3), torch.randn(2)
        tape = GradientTape({'w': w, 'v': v})
        grads = tape.backward((w ** 2).sum())
        assert all_close(grads['w'], 2 * w)
        assert all_close(grads['v'], torch.zeros(2))
        again = backward((3 * w).sum(), GradientTape({'w': w}))
        assert all_close(again['w'], torch.full((3,), 3.0))


class TestSerialization:
    def test_save_load_tensors(self, tmp_path):
        tensors = {'a': torch.randn(3, 4), 'b': torch.arange(5), 'c': torch.tensor(2.5, dtype=torch.float64)}
        path = str(tmp_path / 'records.cmlt')
        save_tensors(tensors, path)
        loaded = load_tensors(path)
        assert sorted(loaded) == ['a', 'b', 'c']
        for name in tensors:
            assert loaded[name].dtype == tensors[name].dtype
            assert torch.equal(loaded[name], tensors[name])

    def test_corrupted_record_names_offset(self, tmp_path):
        path = str(tmp_path / 'records.cmlt')
        save_tensors({'w': torch.ones(2)}, path)
        with open(path, 'rb') as f:
            buffer = bytearray(f.read())
        # name length (4 bytes) + 'w', then the record's magic
        buffer[5] = ord('X')
        with open(path, 'wb') as f:
            f.write(bytes(buffer))
        with pytest.raises(ArtifactError) as info:
            load_tensors(path)
        assert info.value.offset == 5
        assert "offset=5" in str(info.value)

    def test_truncated_record(self, tmp_path):
        path = str(tmp_path / 'records.cmlt')
        save_tensors({'w': torch.ones(10)}, path)
        with open(path, 'rb') as f:
            buffer = f.read()
        with open(path, 'wb') as f:
            f.write(buffer[:-3])
        with pytest.raises(ArtifactError, match="truncated data"):
            load_tensors(path)

    def test_artifact(self, tmp_path):
        directory = str(tmp_path / 'artifact')
        save_artifact(directory, {'kind': 'test'}, {'x': torch.eye(2)})
        manifest, tensors = load_artifact(directory)
        assert manifest['kind'] == 'test'
        assert manifest['tensors'] == ['x']
        assert torch.equal(tensors['x'], torch.eye(2))
        with pytest.raises(ArtifactError):
            load_artifact(str(tmp_path / 'missing'))
