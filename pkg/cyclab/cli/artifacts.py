"""Integrity checks over saved artifacts: tensor records, checkpoints, subspaces, probes and report bundles"""
import os
import pandas as pd
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Sequence
from ..hooks import ORTHONORMAL_TOLERANCE
from ..interventions import load_subspace
from ..models import load_checkpoint
from ..numerics import MANIFEST_NAME, load_artifact, load_tensors, gram_deviation
from ..probes import load_fourier_probes
from ..utils import ArtifactError, LabError, is_valid, load_json
from .report import BUNDLE_NAME, ReportBundle


__all__ = ['VerificationReport', 'verify_artifacts', 'verify_artifact']


@dataclass
class VerificationReport:
    entries: List[Dict] = field(default_factory=list)

    @property
    def ok(self) -> bool: return all(entry['ok'] for entry in self.entries)

    @property
    def failures(self) -> List[Dict]: return [entry for entry in self.entries if not entry['ok']]

    def add(self, path: str, kind: str, ok: bool, message: str=''):
        self.entries.append(OrderedDict([('path', path), ('kind', kind), ('ok', ok), ('message', message)]))

    def rows(self) -> List[Dict]: return list(self.entries)


def _check_kind(directory: str, manifest: Dict) -> str:
    """Kind-specific checks beyond record integrity; returns the artifact kind"""
    kind = manifest.get('kind', 'unknown')
    if kind == 'model':
        load_checkpoint(directory)
    elif kind == 'subspace':
        _, tensors = load_artifact(directory)
        if 'R' in tensors and gram_deviation(tensors['R']) > ORTHONORMAL_TOLERANCE:
            raise ArtifactError("subspace is not orthonormal (Gram deviation "
                                + "{:.3g}".format(gram_deviation(tensors['R'])) + ")", directory)
        load_subspace(directory)
    elif kind == 'fourier_probes':
        probes = load_fourier_probes(directory)
        periods = [probe.period for probe in probes]
        if len(set(periods)) != len(periods):
            raise ArtifactError("probe manifest lists a period twice", directory)
        if not all(is_valid(probe.w_sin) and is_valid(probe.w_cos) for probe in probes):
            raise ArtifactError("probe weights are not finite", directory)
    return kind


def verify_artifact(directory: str, report: VerificationReport):
    try:
        manifest, _ = load_artifact(directory)
        kind = _check_kind(directory, manifest)
    except ArtifactError as e:
        report.add(directory, 'artifact', False, str(e))
    except (LabError, ValueError, KeyError) as e:
        report.add(directory, 'artifact', False, type(e).__name__ + ": " + str(e))
    else:
        report.add(directory, kind, True)


def _verify_bundle(directory: str, report: VerificationReport):
    try:
        bundle = ReportBundle.load(directory)
    except ArtifactError as e:
        report.add(directory, 'report_bundle', False, str(e))
        return
    for name, relative in list(bundle.tables.items()) + list(bundle.grids.items()):
        path = os.path.join(directory, relative)
        try:
            if relative.endswith('.csv'):
                frame = pd.read_csv(path)
                stamps = set(frame['config_hash'].astype(str)) if len(frame) else {bundle.config_hash}
                if stamps != {bundle.config_hash} or 'seed' not in frame:
                    raise ArtifactError("table is not stamped with the bundle's config hash and seed", path)
            else:
                grid = load_json(path)
                if grid.get('config_hash') != bundle.config_hash or grid.get('seed') != bundle.seed:
                    raise ArtifactError("grid is not stamped with the bundle's config hash and seed", path)
        except (OSError, ValueError, KeyError) as e:
            report.add(path, name, False, type(e).__name__ + ": " + str(e))
        except ArtifactError as e:
            report.add(path, name, False, str(e))
        else:
            report.add(path, name, True)
    if bundle.failures:
        report.add(directory, 'report_bundle', False, "bundle records failed stages "
                   + str([failure['stage'] for failure in bundle.failures]))
    else:
        report.add(directory, 'report_bundle', True)


def verify_artifacts(paths: Sequence[str]) -> VerificationReport:
    """
    Check every artifact under `paths`: CMLT record integrity (failures name the byte offset), subspace
    orthonormality, probe and checkpoint manifest consistency, and report bundle stamps. Directories are
    searched recursively.
    """
    report = VerificationReport()
    for path in paths:
        if not os.path.exists(path):
            report.add(path, 'missing', False, "no such file or directory")
        elif os.path.isfile(path):
            try:
                tensors = load_tensors(path)
                bad = [name for name, tensor in tensors.items() if not is_valid(tensor)]
                if bad:
                    raise ArtifactError("non-finite tensors " + str(bad), path)
            except ArtifactError as e:
                report.add(path, 'tensors', False, str(e))
            else:
                report.add(path, 'tensors', True)
        else:
            for root, dirs, files in os.walk(path):
                dirs.sort()
                if MANIFEST_NAME in files:
                    verify_artifact(root, report)
                if BUNDLE_NAME in files:
                    _verify_bundle(root, report)
    return report
