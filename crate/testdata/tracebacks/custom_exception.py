class InvalidMove(Exception):
    pass


def play(pos):
    if pos > 8:
        raise InvalidMove(f"square {pos} is off the board")
    return pos


play(9)
