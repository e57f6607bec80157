import re
def tool_function(input_data: str, **kwargs):
    # Extracts two numbers and calculates their ratio.
    numbers = re.findall(r'\d+\.?\d*', input_data)
    a, b = float(numbers[0]), float(numbers[1])
    return f"The ratio is: {a / b}"
