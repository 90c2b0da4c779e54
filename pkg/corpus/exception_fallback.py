try:
    size = value + 1
except TypeError:
    size = 0
print(size)
