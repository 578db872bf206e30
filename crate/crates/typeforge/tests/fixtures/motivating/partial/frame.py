from indexing import _LocationIndexer


class Frame:
    """A small column store addressed by integer position."""

    def __init__(self, data):
        self._data = {name: list(values) for name, values in data.items()}
        n_rows = len(next(iter(self._data.values()), []))
        self.axes = [list(range(n_rows)), list(self._data)]

    @property
    def iloc(self):
        return _LocationIndexer(self)

    def take(self, positions):
        row, col = (list(positions) + [None])[:2]
        names = self.axes[1] if col is None else [self.axes[1][col]]
        return {name: self._data[name][row] for name in names}
