"""Report bundles: plot-ready CSV tables and JSON grids, each stamped with the config hash and seed"""
import os
import numpy as np
import pandas as pd
from collections import OrderedDict
from typing import Any, Dict, List, Optional, Sequence
from ..utils import ArtifactError, LabError, save_json, load_json


__all__ = ['ReportBundle', 'BUNDLE_NAME', 'TABLES_DIR', 'GRIDS_DIR', 'to_plain']


BUNDLE_NAME = 'bundle.json'
TABLES_DIR = 'tables'
GRIDS_DIR = 'grids'


def to_plain(obj: Any) -> Any:
    """Convert numpy / torch values and tuple keys into JSON-compatible structures"""
    if isinstance(obj, dict):
        return OrderedDict(
            (k if isinstance(k, str) else ("|".join(map(str, k)) if isinstance(k, tuple) else str(k)), to_plain(v))
            for k, v in obj.items()
        )
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if hasattr(obj, 'tolist') and not isinstance(obj, (str, bytes)):
        return to_plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return None if np.isnan(value) else value
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


class ReportBundle:
    """
    Named tables (tables/<name>.csv) and grids (grids/<name>.json) under one directory, indexed by
    bundle.json together with the stage log and any failure records
    """
    def __init__(self, directory: str, config_hash: str, seed: int):
        self.directory, self.config_hash, self.seed = directory, config_hash, seed
        self.tables: Dict[str, str] = OrderedDict()
        self.grids: Dict[str, str] = OrderedDict()
        self.stages: Dict[str, Dict[str, Any]] = OrderedDict()
        self.failures: List[Dict[str, Any]] = []

    def add_table(self, name: str, rows: Sequence[Dict[str, Any]]) -> str:
        """Write rows as CSV with leading config_hash and seed columns; returns the relative path"""
        frame = pd.DataFrame([to_plain(dict(row)) for row in rows])
        frame.insert(0, 'seed', self.seed)
        frame.insert(0, 'config_hash', self.config_hash)
        relative = os.path.join(TABLES_DIR, name + '.csv')
        os.makedirs(os.path.join(self.directory, TABLES_DIR), exist_ok=True)
        frame.to_csv(os.path.join(self.directory, relative), index=False, float_format='%.10g')
        self.tables[name] = relative
        return relative

    def add_grid(self, name: str, data: Any) -> str:
        relative = os.path.join(GRIDS_DIR, name + '.json')
        os.makedirs(os.path.join(self.directory, GRIDS_DIR), exist_ok=True)
        save_json(
            {'config_hash': self.config_hash, 'seed': self.seed, 'data': to_plain(data)},
            os.path.join(self.directory, relative)
        )
        self.grids[name] = relative
        return relative

    def record_stage(self, stage: str, status: str, outputs: Sequence[str]=()):
        self.stages[stage] = OrderedDict([('status', status), ('outputs', list(outputs))])

    def record_failure(self, stage: str, error: Exception):
        exit_code = error.exit_code if isinstance(error, LabError) else 1
        self.failures.append(OrderedDict([
            ('stage', stage), ('error', type(error).__name__), ('message', str(error)), ('exit_code', exit_code)
        ]))
        self.record_stage(stage, 'failed')

    @property
    def complete(self) -> bool: return len(self.failures) == 0

    @property
    def exit_code(self) -> int: return self.failures[0]['exit_code'] if self.failures else 0

    def table(self, name: str) -> pd.DataFrame:
        if name not in self.tables:
            raise ArtifactError("bundle has no table " + repr(name), self.directory)
        return pd.read_csv(os.path.join(self.directory, self.tables[name]))

    def grid(self, name: str) -> Any:
        if name not in self.grids:
            raise ArtifactError("bundle has no grid " + repr(name), self.directory)
        return load_json(os.path.join(self.directory, self.grids[name]))['data']

    def names(self) -> List[str]: return sorted(list(self.tables) + list(self.grids))

    def write(self, path: Optional[str]=None) -> str:
        path = os.path.join(self.directory, BUNDLE_NAME) if path is None else path
        save_json(OrderedDict([
            ('kind', 'report_bundle'), ('config_hash', self.config_hash), ('seed', self.seed),
            ('tables', self.tables), ('grids', self.grids), ('stages', self.stages), ('failures', self.failures)
        ]), path)
        return path

    @classmethod
    def load(cls, directory: str) -> 'ReportBundle':
        path = os.path.join(directory, BUNDLE_NAME)
        if not os.path.exists(path):
            raise ArtifactError("missing bundle index", path)
        try:
            index = load_json(path)
            bundle = cls(directory, index['config_hash'], index['seed'])
            bundle.tables.update(index['tables'])
            bundle.grids.update(index['grids'])
            bundle.stages.update(index['stages'])
            bundle.failures = list(index['failures'])
        except (ValueError, KeyError, TypeError) as e:
            raise ArtifactError("bad bundle index: " + str(e), path)
        return bundle
