def fit(train):
    values = [float(cell) for cell in train.iloc[:, -1]]
    if not values:
        raise ValueError("cannot fit on an empty table")
    mean = sum(values) / len(values)

    def predict(row):
        return mean

    return predict


def apply(model, data):
    return [model(tuple(row)) for row in data.itertuples(index=False)]
