name = person.name
greeting = "Hello, " + name
print(greeting)
