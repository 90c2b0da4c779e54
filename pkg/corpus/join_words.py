words = [str(first), str(second)]
sentence = " ".join(words)
print(sentence)
