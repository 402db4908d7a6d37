instance.optIn("1234567891234567", "UnwantedData", true);
