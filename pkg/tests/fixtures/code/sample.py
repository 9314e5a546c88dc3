import os
import sys

LIMIT = 10


def clamp(value, low=0, high=LIMIT):
    if value < low:
        return low
    if value > high:
        return high
    return value


class Store:
    def __init__(self, root):
        self.root = root

    def path_for(self, name):
        def safe(part):
            return part.replace("..", "")
        return os.path.join(self.root, safe(name))


if __name__ == "__main__":
    print(clamp(int(sys.argv[1])))
