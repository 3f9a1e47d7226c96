def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains a model or runs the pipeline end to end")
