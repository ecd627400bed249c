def always():
    raise RuntimeError("this fixture function always fails")
