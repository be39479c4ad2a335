def parse(s):
    return [int(t) for t in s.split(",")]


def load(s):
    nums = parse(s)
    return max(nums)


print(load("1,2,x"))
