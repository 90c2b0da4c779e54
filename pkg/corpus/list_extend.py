values = list(seq)
values.append(1)
total = len(values)
print(total)
