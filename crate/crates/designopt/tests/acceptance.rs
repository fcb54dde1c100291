// placeholder until the acceptance suite lands
